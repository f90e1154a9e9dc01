//! Referencing-event data model: 36-frame multimodal windows with
//! per-feature availability, gap interpolation, tensor conversion and
//! subject-based dataset splitting.

use crate::geometry::{EulerAngles, Vec3};
use crate::math;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Frames per referencing event (0.8 s at 45 Hz).
pub const EVENT_FRAMES: usize = 36;
/// Tracked features per frame: finger tip/direction, eye position/gaze,
/// head position/orientation.
pub const FEATURE_COUNT: usize = 6;
/// Components per feature.
pub const FEATURE_DIMS: usize = 3;
/// Capture rate of the source streams.
pub const FRAME_RATE_HZ: u32 = 45;

#[derive(Debug, Clone, PartialEq)]
pub enum EventError {
    /// Stream shorter than one event window.
    InsufficientFrames { got: usize },
    /// Trigger index outside the stream or window.
    WozOutOfRange { woz: usize, len: usize },
    /// Event does not hold exactly [`EVENT_FRAMES`] frames.
    WrongFrameCount { got: usize },
    /// Unknown subject, or test and validation subject coincide.
    InvalidSubject(String),
    /// An available direction feature is not unit-norm.
    NonUnitDirection { frame: usize, feature: FeatureId },
}

impl fmt::Display for EventError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventError::InsufficientFrames { got } => {
                write!(f, "stream of {got} frames is shorter than {EVENT_FRAMES}")
            }
            EventError::WozOutOfRange { woz, len } => {
                write!(f, "trigger index {woz} outside stream of length {len}")
            }
            EventError::WrongFrameCount { got } => {
                write!(f, "event holds {got} frames, expected {EVENT_FRAMES}")
            }
            EventError::InvalidSubject(s) => write!(f, "invalid subject: {s}"),
            EventError::NonUnitDirection { frame, feature } => {
                write!(f, "frame {frame}: {feature:?} is not unit-norm")
            }
        }
    }
}

impl core::error::Error for EventError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UseCase {
    Cockpit,
    Environment,
}

impl UseCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            UseCase::Cockpit => "cockpit",
            UseCase::Environment => "environment",
        }
    }
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }
}

/// One tracked input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Finger,
    Eye,
    Head,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Finger, Modality::Eye, Modality::Head];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Finger => "finger",
            Modality::Eye => "eye",
            Modality::Head => "head",
        }
    }

    /// The two feature rows this modality occupies in tensor layout.
    pub fn features(&self) -> [FeatureId; 2] {
        match self {
            Modality::Finger => [FeatureId::FingerTip, FeatureId::FingerDir],
            Modality::Eye => [FeatureId::EyePos, FeatureId::EyeDir],
            Modality::Head => [FeatureId::HeadPos, FeatureId::HeadEuler],
        }
    }
}

/// Non-empty subset of the three modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const FULL: ModalitySet = ModalitySet(0b111);

    pub fn empty() -> Self {
        ModalitySet(0)
    }

    pub fn of(modalities: &[Modality]) -> Self {
        let mut s = ModalitySet(0);
        for m in modalities {
            s = s.with(*m);
        }
        s
    }

    pub fn single(m: Modality) -> Self {
        ModalitySet(0).with(m)
    }

    pub fn with(self, m: Modality) -> Self {
        ModalitySet(self.0 | 1 << m as u8)
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0 & (1 << m as u8) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in tensor-layout order (finger, eye, head).
    pub fn members(&self) -> Vec<Modality> {
        Modality::ALL
            .iter()
            .copied()
            .filter(|m| self.contains(*m))
            .collect()
    }

    /// All 7 non-empty subsets, singletons first, full set last.
    pub fn all_nonempty() -> Vec<ModalitySet> {
        let mut out: Vec<ModalitySet> = (1u8..8).map(ModalitySet).collect();
        out.sort_by_key(|s| (s.len(), s.0));
        out
    }

    /// Parses strings like `"eye,head,finger"` (any order, case-insensitive).
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut set = ModalitySet(0);
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let m = match part.to_ascii_lowercase().as_str() {
                "finger" => Modality::Finger,
                "eye" => Modality::Eye,
                "head" => Modality::Head,
                other => return Err(alloc::format!("unknown modality: {other}")),
            };
            set = set.with(m);
        }
        if set.is_empty() {
            return Err("empty modality set".to_string());
        }
        Ok(set)
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.members().iter().map(|m| m.as_str()).collect();
        f.write_str(&names.join("+"))
    }
}

/// One of the six per-frame features, in tensor-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureId {
    FingerTip = 0,
    FingerDir = 1,
    EyePos = 2,
    EyeDir = 3,
    HeadPos = 4,
    HeadEuler = 5,
}

impl FeatureId {
    pub const ALL: [FeatureId; FEATURE_COUNT] = [
        FeatureId::FingerTip,
        FeatureId::FingerDir,
        FeatureId::EyePos,
        FeatureId::EyeDir,
        FeatureId::HeadPos,
        FeatureId::HeadEuler,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn is_direction(&self) -> bool {
        matches!(self, FeatureId::FingerDir | FeatureId::EyeDir)
    }

    pub fn modality(&self) -> Modality {
        match self {
            FeatureId::FingerTip | FeatureId::FingerDir => Modality::Finger,
            FeatureId::EyePos | FeatureId::EyeDir => Modality::Eye,
            FeatureId::HeadPos | FeatureId::HeadEuler => Modality::Head,
        }
    }
}

/// One capture instant. Unavailable features hold the 0.0 sentinel; the
/// availability mask is authoritative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Frame {
    pub finger_tip: Vec3,
    pub finger_dir: Vec3,
    pub eye_pos: Vec3,
    pub eye_dir: Vec3,
    pub head_pos: Vec3,
    pub head_euler: EulerAngles,
    /// Bit i set = feature i (in [`FeatureId`] order) was tracked.
    pub availability: u8,
}

impl Frame {
    pub const ALL_AVAILABLE: u8 = 0b11_1111;

    pub fn is_available(&self, f: FeatureId) -> bool {
        self.availability & (1 << f.index()) != 0
    }

    pub fn set_available(&mut self, f: FeatureId, available: bool) {
        if available {
            self.availability |= 1 << f.index();
        } else {
            self.availability &= !(1 << f.index());
        }
    }

    /// Raw components of a feature (head orientation as degrees).
    pub fn feature(&self, f: FeatureId) -> [f64; 3] {
        match f {
            FeatureId::FingerTip => [self.finger_tip.x, self.finger_tip.y, self.finger_tip.z],
            FeatureId::FingerDir => [self.finger_dir.x, self.finger_dir.y, self.finger_dir.z],
            FeatureId::EyePos => [self.eye_pos.x, self.eye_pos.y, self.eye_pos.z],
            FeatureId::EyeDir => [self.eye_dir.x, self.eye_dir.y, self.eye_dir.z],
            FeatureId::HeadPos => [self.head_pos.x, self.head_pos.y, self.head_pos.z],
            FeatureId::HeadEuler => [
                self.head_euler.yaw_deg,
                self.head_euler.pitch_deg,
                self.head_euler.roll_deg,
            ],
        }
    }

    pub fn set_feature(&mut self, f: FeatureId, v: [f64; 3]) {
        match f {
            FeatureId::FingerTip => self.finger_tip = Vec3::new(v[0], v[1], v[2]),
            FeatureId::FingerDir => self.finger_dir = Vec3::new(v[0], v[1], v[2]),
            FeatureId::EyePos => self.eye_pos = Vec3::new(v[0], v[1], v[2]),
            FeatureId::EyeDir => self.eye_dir = Vec3::new(v[0], v[1], v[2]),
            FeatureId::HeadPos => self.head_pos = Vec3::new(v[0], v[1], v[2]),
            FeatureId::HeadEuler => self.head_euler = EulerAngles::new(v[0], v[1], v[2]),
        }
    }
}

/// One pointing gesture: exactly [`EVENT_FRAMES`] frames around the spoken
/// trigger, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencingEvent {
    pub subject_id: String,
    pub use_case: UseCase,
    pub target_id: String,
    pub pose_id: Option<u8>,
    pub frames: Vec<Frame>,
    /// Index of the trigger instant within `frames`.
    pub woz_index: usize,
    pub hand: Hand,
}

impl ReferencingEvent {
    /// Checks frame count, trigger bounds and unit norm (within 1e-6) of
    /// available direction features.
    pub fn validate(&self) -> Result<(), EventError> {
        if self.frames.len() != EVENT_FRAMES {
            return Err(EventError::WrongFrameCount {
                got: self.frames.len(),
            });
        }
        if self.woz_index >= EVENT_FRAMES {
            return Err(EventError::WozOutOfRange {
                woz: self.woz_index,
                len: EVENT_FRAMES,
            });
        }
        for (i, frame) in self.frames.iter().enumerate() {
            for f in [FeatureId::FingerDir, FeatureId::EyeDir] {
                if frame.is_available(f) {
                    let v = frame.feature(f);
                    let norm = math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                    if math::abs(norm - 1.0) > 1e-6 {
                        return Err(EventError::NonUnitDirection {
                            frame: i,
                            feature: f,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn woz_frame(&self) -> &Frame {
        &self.frames[self.woz_index]
    }
}

/// Extracts a 36-frame window containing the trigger from a longer stream.
/// The window is centered on the trigger where the stream allows, clamped at
/// the boundaries otherwise. Returns the window and the trigger index
/// relative to it.
pub fn window_frames(stream: &[Frame], woz: usize) -> Result<(Vec<Frame>, usize), EventError> {
    if stream.len() < EVENT_FRAMES {
        return Err(EventError::InsufficientFrames { got: stream.len() });
    }
    if woz >= stream.len() {
        return Err(EventError::WozOutOfRange {
            woz,
            len: stream.len(),
        });
    }
    let half = EVENT_FRAMES / 2;
    let start = woz.saturating_sub(half).min(stream.len() - EVENT_FRAMES);
    Ok((stream[start..start + EVENT_FRAMES].to_vec(), woz - start))
}

/// Builds a labeled event from a raw stream via [`window_frames`].
#[allow(clippy::too_many_arguments)]
pub fn window_event(
    stream: &[Frame],
    woz: usize,
    subject_id: &str,
    use_case: UseCase,
    target_id: &str,
    pose_id: Option<u8>,
    hand: Hand,
) -> Result<ReferencingEvent, EventError> {
    let (frames, woz_index) = window_frames(stream, woz)?;
    Ok(ReferencingEvent {
        subject_id: subject_id.to_string(),
        use_case,
        target_id: target_id.to_string(),
        pose_id,
        frames,
        woz_index,
        hand,
    })
}

/// Features that stayed below 2 available frames and were left as sentinels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterpolationReport {
    pub unavailable_features: Vec<FeatureId>,
}

impl InterpolationReport {
    pub fn feature_unavailable(&self, f: FeatureId) -> bool {
        self.unavailable_features.contains(&f)
    }
}

/// Fills unavailable cells by linear interpolation between the two nearest
/// available frames of the same feature; leading and trailing gaps hold the
/// nearest available value. Direction features are re-normalized after
/// interpolation. Features with fewer than 2 available frames are reported
/// and left untouched.
pub fn interpolate_missing(frames: &[Frame]) -> (Vec<Frame>, InterpolationReport) {
    let mut out = frames.to_vec();
    let mut report = InterpolationReport::default();
    for feature in FeatureId::ALL {
        let available: Vec<usize> = (0..frames.len())
            .filter(|&t| frames[t].is_available(feature))
            .collect();
        if available.len() == frames.len() {
            continue;
        }
        if available.len() < 2 {
            report.unavailable_features.push(feature);
            continue;
        }
        for t in 0..frames.len() {
            if frames[t].is_available(feature) {
                continue;
            }
            let prev = available.iter().rev().find(|&&a| a < t).copied();
            let next = available.iter().find(|&&a| a > t).copied();
            let value = match (prev, next) {
                (Some(p), Some(n)) => {
                    let a = frames[p].feature(feature);
                    let b = frames[n].feature(feature);
                    let w = (t - p) as f64 / (n - p) as f64;
                    let mut v = [0.0; 3];
                    for d in 0..3 {
                        v[d] = a[d] + (b[d] - a[d]) * w;
                    }
                    if feature.is_direction() {
                        let norm = math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                        if norm > 1e-9 {
                            for c in v.iter_mut() {
                                *c /= norm;
                            }
                        } else {
                            // Antipodal endpoints cancel out; hold the
                            // nearer neighbor instead.
                            v = if t - p <= n - t {
                                frames[p].feature(feature)
                            } else {
                                frames[n].feature(feature)
                            };
                        }
                    }
                    v
                }
                (None, Some(n)) => frames[n].feature(feature),
                (Some(p), None) => frames[p].feature(feature),
                (None, None) => unreachable!("available.len() >= 2"),
            };
            out[t].set_feature(feature, value);
            out[t].set_available(feature, true);
        }
    }
    (out, report)
}

/// Dense view of an event: `frames x features x 3` values with per-cell
/// validity. Head orientation is carried in radians here; positions in
/// meters; directions unit vectors. Invalid cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub frames: usize,
    pub features: usize,
    /// Row-major `[frame][feature][dim]`.
    pub values: Vec<f64>,
    /// Row-major `[frame][feature]`.
    pub validity: Vec<bool>,
}

impl FeatureTensor {
    pub fn value(&self, t: usize, f: usize, d: usize) -> f64 {
        self.values[(t * self.features + f) * FEATURE_DIMS + d]
    }

    pub fn is_valid(&self, t: usize, f: usize) -> bool {
        self.validity[t * self.features + f]
    }
}

/// Converts an event to its tensor form. Feature order is fixed:
/// finger tip, finger direction, eye position, eye direction, head
/// position, head orientation.
pub fn to_tensor(event: &ReferencingEvent) -> FeatureTensor {
    let frames = event.frames.len();
    let mut values = Vec::with_capacity(frames * FEATURE_COUNT * FEATURE_DIMS);
    let mut validity = Vec::with_capacity(frames * FEATURE_COUNT);
    for frame in &event.frames {
        for feature in FeatureId::ALL {
            let valid = frame.is_available(feature);
            validity.push(valid);
            if valid {
                let mut v = frame.feature(feature);
                if feature == FeatureId::HeadEuler {
                    for c in v.iter_mut() {
                        *c = math::to_rad(*c);
                    }
                }
                values.extend_from_slice(&v);
            } else {
                values.extend_from_slice(&[0.0; 3]);
            }
        }
    }
    FeatureTensor {
        frames,
        features: FEATURE_COUNT,
        values,
        validity,
    }
}

/// Rebuilds frames from a full-width tensor, inverting [`to_tensor`]:
/// valid cells are written back (head orientation converted to degrees),
/// invalid cells get the sentinel. Labels are copied from `template`.
pub fn from_tensor(tensor: &FeatureTensor, template: &ReferencingEvent) -> ReferencingEvent {
    debug_assert_eq!(tensor.features, FEATURE_COUNT);
    let mut event = template.clone();
    event.frames = (0..tensor.frames)
        .map(|t| {
            let mut frame = Frame::default();
            for feature in FeatureId::ALL {
                let valid = tensor.is_valid(t, feature.index());
                frame.set_available(feature, valid);
                if valid {
                    let mut v = [
                        tensor.value(t, feature.index(), 0),
                        tensor.value(t, feature.index(), 1),
                        tensor.value(t, feature.index(), 2),
                    ];
                    if feature == FeatureId::HeadEuler {
                        for c in v.iter_mut() {
                            *c = math::to_deg(*c);
                        }
                    }
                    frame.set_feature(feature, v);
                }
            }
            frame
        })
        .collect();
    event
}

/// Keeps the 2 feature rows of each selected modality, in layout order.
pub fn modality_slice(tensor: &FeatureTensor, modalities: ModalitySet) -> FeatureTensor {
    let keep: Vec<usize> = Modality::ALL
        .iter()
        .filter(|m| modalities.contains(**m))
        .flat_map(|m| m.features().into_iter().map(|f| f.index()))
        .collect();
    let mut values = Vec::with_capacity(tensor.frames * keep.len() * FEATURE_DIMS);
    let mut validity = Vec::with_capacity(tensor.frames * keep.len());
    for t in 0..tensor.frames {
        for &f in &keep {
            validity.push(tensor.is_valid(t, f));
            for d in 0..FEATURE_DIMS {
                values.push(tensor.value(t, f, d));
            }
        }
    }
    FeatureTensor {
        frames: tensor.frames,
        features: keep.len(),
        values,
        validity,
    }
}

/// A set of referencing events tied to a scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub events: Vec<ReferencingEvent>,
    /// Identity of the scene the events reference (builtin name or file id).
    pub scene_ref: String,
    /// How this set was carved out of a larger one, e.g.
    /// `"test(s03)"`; `None` for full datasets.
    pub split: Option<String>,
}

impl Dataset {
    pub fn new(events: Vec<ReferencingEvent>, scene_ref: &str) -> Self {
        Dataset {
            events,
            scene_ref: scene_ref.to_string(),
            split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sorted unique subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.events {
            if !out.contains(&e.subject_id) {
                out.push(e.subject_id.clone());
            }
        }
        out.sort();
        out
    }

    /// Merges two datasets (used for combined-use-case training).
    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        Dataset {
            events,
            scene_ref: alloc::format!("{}+{}", self.scene_ref, other.scene_ref),
            split: None,
        }
    }
}

/// Partitions a dataset by subject into (train, validation, test). The
/// validation and test subjects must be distinct and present.
pub fn split_loso(
    dataset: &Dataset,
    test_subject: &str,
    val_subject: &str,
) -> Result<(Dataset, Dataset, Dataset), EventError> {
    if test_subject == val_subject {
        return Err(EventError::InvalidSubject(alloc::format!(
            "test and validation subject are both {test_subject}"
        )));
    }
    let subjects = dataset.subjects();
    for s in [test_subject, val_subject] {
        if !subjects.iter().any(|x| x == s) {
            return Err(EventError::InvalidSubject(s.to_string()));
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for e in &dataset.events {
        if e.subject_id == test_subject {
            test.push(e.clone());
        } else if e.subject_id == val_subject {
            val.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    let tagged = |events: Vec<ReferencingEvent>, split: String| Dataset {
        events,
        scene_ref: dataset.scene_ref.clone(),
        split: Some(split),
    };
    Ok((
        tagged(
            train,
            alloc::format!("train(test={test_subject},val={val_subject})"),
        ),
        tagged(val, alloc::format!("val({val_subject})")),
        tagged(test, alloc::format!("test({test_subject})")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with_value(v: f64) -> Frame {
        let mut f = Frame {
            availability: Frame::ALL_AVAILABLE,
            ..Frame::default()
        };
        for feature in FeatureId::ALL {
            f.set_feature(feature, [v, v, v]);
        }
        // Keep directions unit-norm for validation friendliness.
        f.finger_dir = Vec3::new(1.0, 0.0, 0.0);
        f.eye_dir = Vec3::new(1.0, 0.0, 0.0);
        f
    }

    fn stream(n: usize) -> Vec<Frame> {
        (0..n).map(|i| frame_with_value(i as f64)).collect()
    }

    #[test]
    fn window_centered() {
        let s = stream(100);
        let (w, woz) = window_frames(&s, 50).unwrap();
        assert_eq!(w.len(), 36);
        assert_eq!(woz, 18);
        assert_eq!(w[0].finger_tip.x, 32.0);
        assert_eq!(w[35].finger_tip.x, 67.0);
    }

    #[test]
    fn window_exact_length_stream() {
        let s = stream(36);
        let (w, woz) = window_frames(&s, 10).unwrap();
        assert_eq!(w.len(), 36);
        assert_eq!(woz, 10);
        assert_eq!(w[0].finger_tip.x, 0.0);
    }

    #[test]
    fn window_clamps_at_boundaries() {
        let s = stream(100);
        let (_, woz) = window_frames(&s, 3).unwrap();
        assert_eq!(woz, 3);
        let (w, woz) = window_frames(&s, 98).unwrap();
        assert_eq!(woz, 34);
        assert_eq!(w[0].finger_tip.x, 64.0);
    }

    #[test]
    fn window_too_short() {
        let s = stream(20);
        assert_eq!(
            window_frames(&s, 10).unwrap_err(),
            EventError::InsufficientFrames { got: 20 }
        );
    }

    #[test]
    fn interpolate_midpoint_gap() {
        let mut frames = stream(36);
        frames[5].set_feature(FeatureId::HeadPos, [1.0, 1.0, 1.0]);
        frames[7].set_feature(FeatureId::HeadPos, [3.0, 3.0, 3.0]);
        frames[6].set_available(FeatureId::HeadPos, false);
        let (out, report) = interpolate_missing(&frames);
        assert!(report.unavailable_features.is_empty());
        assert_eq!(out[6].feature(FeatureId::HeadPos), [2.0, 2.0, 2.0]);
        assert!(out[6].is_available(FeatureId::HeadPos));
    }

    #[test]
    fn interpolate_identity_when_complete() {
        let frames = stream(36);
        let (out, report) = interpolate_missing(&frames);
        assert_eq!(out, frames);
        assert!(report.unavailable_features.is_empty());
    }

    #[test]
    fn interpolate_reconstructs_interior_ramp() {
        // Linear ramps with ~30% of interior cells removed come back exactly.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut frames: Vec<Frame> = (0..36)
            .map(|t| {
                let mut f = frame_with_value(0.0);
                let x = t as f64;
                f.set_feature(FeatureId::FingerTip, [0.5 * x, -x, 2.0 * x + 1.0]);
                f.set_feature(FeatureId::EyePos, [x, 0.25 * x, 3.0 - x]);
                f.set_feature(FeatureId::HeadEuler, [x, -0.5 * x, 0.1 * x]);
                f
            })
            .collect();
        let reference = frames.clone();
        for frame in frames.iter_mut().take(35).skip(1) {
            for feature in [
                FeatureId::FingerTip,
                FeatureId::EyePos,
                FeatureId::HeadEuler,
            ] {
                if rng.random_range(0.0..1.0) < 0.3 {
                    frame.set_available(feature, false);
                    frame.set_feature(feature, [0.0; 3]);
                }
            }
        }
        let (out, _) = interpolate_missing(&frames);
        for (t, (filled, reference)) in out.iter().zip(&reference).enumerate() {
            for feature in [
                FeatureId::FingerTip,
                FeatureId::EyePos,
                FeatureId::HeadEuler,
            ] {
                let got = filled.feature(feature);
                let want = reference.feature(feature);
                for d in 0..3 {
                    assert!(
                        (got[d] - want[d]).abs() < 1e-9,
                        "frame {t} {feature:?} dim {d}: {} vs {}",
                        got[d],
                        want[d]
                    );
                }
            }
        }
    }

    #[test]
    fn interpolate_holds_at_edges() {
        let mut frames = stream(36);
        for frame in &mut frames[..3] {
            frame.set_available(FeatureId::EyePos, false);
        }
        for frame in &mut frames[33..] {
            frame.set_available(FeatureId::EyePos, false);
        }
        let (out, _) = interpolate_missing(&frames);
        assert_eq!(out[0].feature(FeatureId::EyePos), [3.0, 3.0, 3.0]);
        assert_eq!(out[35].feature(FeatureId::EyePos), [32.0, 32.0, 32.0]);
    }

    #[test]
    fn interpolate_renormalizes_directions() {
        let mut frames = stream(36);
        frames[10].set_feature(FeatureId::EyeDir, [1.0, 0.0, 0.0]);
        frames[12].set_feature(FeatureId::EyeDir, [0.0, 1.0, 0.0]);
        frames[11].set_available(FeatureId::EyeDir, false);
        let (out, _) = interpolate_missing(&frames);
        let v = out[11].feature(FeatureId::EyeDir);
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn interpolate_flags_starved_feature() {
        let mut frames = stream(36);
        for (t, frame) in frames.iter_mut().enumerate() {
            if t != 7 {
                frame.set_available(FeatureId::FingerDir, false);
            }
        }
        let (out, report) = interpolate_missing(&frames);
        assert!(report.feature_unavailable(FeatureId::FingerDir));
        // Untouched: still only one available frame.
        assert!(!out[0].is_available(FeatureId::FingerDir));
        assert!(out[7].is_available(FeatureId::FingerDir));
    }

    #[test]
    fn interpolate_idempotent() {
        let mut frames = stream(36);
        for t in [4usize, 5, 9, 20, 30] {
            frames[t].set_available(FeatureId::HeadPos, false);
            frames[t].set_available(FeatureId::FingerDir, false);
        }
        for frame in frames.iter_mut() {
            frame.set_available(FeatureId::EyeDir, false);
        }
        let (once, r1) = interpolate_missing(&frames);
        let (twice, r2) = interpolate_missing(&once);
        assert_eq!(once, twice);
        assert_eq!(r1, r2);
    }

    fn sample_event() -> ReferencingEvent {
        ReferencingEvent {
            subject_id: "s01".into(),
            use_case: UseCase::Cockpit,
            target_id: "aoi-01".into(),
            pose_id: None,
            frames: stream(36),
            woz_index: 18,
            hand: Hand::Right,
        }
    }

    #[test]
    fn tensor_shape_and_order() {
        let e = sample_event();
        let t = to_tensor(&e);
        assert_eq!(t.frames, 36);
        assert_eq!(t.features, 6);
        assert_eq!(t.values.len(), 36 * 6 * 3);
        // Head orientation enters in radians.
        let deg = e.frames[0].head_euler.yaw_deg;
        assert!((t.value(0, FeatureId::HeadEuler.index(), 0) - deg.to_radians()).abs() < 1e-12);
        // Finger tip is feature row 0.
        assert_eq!(t.value(3, 0, 0), e.frames[3].finger_tip.x);
    }

    #[test]
    fn tensor_invalid_cells_are_zero() {
        let mut e = sample_event();
        e.frames[2].set_available(FeatureId::EyePos, false);
        let t = to_tensor(&e);
        assert!(!t.is_valid(2, FeatureId::EyePos.index()));
        for d in 0..3 {
            assert_eq!(t.value(2, FeatureId::EyePos.index(), d), 0.0);
        }
    }

    #[test]
    fn slice_shapes() {
        let t = to_tensor(&sample_event());
        let finger = modality_slice(&t, ModalitySet::single(Modality::Finger));
        assert_eq!((finger.frames, finger.features), (36, 2));
        let eye_head = modality_slice(&t, ModalitySet::of(&[Modality::Eye, Modality::Head]));
        assert_eq!((eye_head.frames, eye_head.features), (36, 4));
        // Eye rows come before head rows.
        assert_eq!(
            eye_head.value(0, 0, 0),
            t.value(0, FeatureId::EyePos.index(), 0)
        );
        assert_eq!(
            eye_head.value(0, 2, 0),
            t.value(0, FeatureId::HeadPos.index(), 0)
        );
        let full = modality_slice(&t, ModalitySet::FULL);
        assert_eq!(full, t);
    }

    fn dataset_with_subjects(subjects: &[&str], per: usize) -> Dataset {
        let mut events = Vec::new();
        for s in subjects {
            for _ in 0..per {
                let mut e = sample_event();
                e.subject_id = s.to_string();
                events.push(e);
            }
        }
        Dataset::new(events, "builtin:cockpit")
    }

    #[test]
    fn loso_partition() {
        let d = dataset_with_subjects(
            &[
                "s01", "s02", "s03", "s04", "s05", "s06", "s07", "s08", "s09", "s10", "s11",
            ],
            3,
        );
        let (train, val, test) = split_loso(&d, "s03", "s04").unwrap();
        assert_eq!(train.subjects().len(), 9);
        assert_eq!(val.subjects(), alloc::vec!["s04".to_string()]);
        assert_eq!(test.subjects(), alloc::vec!["s03".to_string()]);
        assert_eq!(train.len() + val.len() + test.len(), d.len());
        // Disjoint by construction: no shared subjects.
        for s in train.subjects() {
            assert!(s != "s03" && s != "s04");
        }
    }

    #[test]
    fn loso_rejects_bad_subjects() {
        let d = dataset_with_subjects(&["a", "b", "c"], 1);
        assert!(matches!(
            split_loso(&d, "a", "a"),
            Err(EventError::InvalidSubject(_))
        ));
        assert!(matches!(
            split_loso(&d, "zz", "a"),
            Err(EventError::InvalidSubject(_))
        ));
    }

    #[test]
    fn modality_set_parse_and_display() {
        let s = ModalitySet::parse("eye,head,finger").unwrap();
        assert_eq!(s, ModalitySet::FULL);
        assert_eq!(alloc::format!("{s}"), "finger+eye+head");
        assert_eq!(ModalitySet::all_nonempty().len(), 7);
        assert!(ModalitySet::parse("finger,sonar").is_err());
        assert!(ModalitySet::parse("").is_err());
    }

    #[test]
    fn validate_catches_bad_events() {
        let mut e = sample_event();
        e.frames.pop();
        assert_eq!(
            e.validate().unwrap_err(),
            EventError::WrongFrameCount { got: 35 }
        );
        let mut e = sample_event();
        e.frames[9].finger_dir = Vec3::new(2.0, 0.0, 0.0);
        assert!(matches!(
            e.validate().unwrap_err(),
            EventError::NonUnitDirection { frame: 9, .. }
        ));
        assert!(sample_event().validate().is_ok());
    }
}
