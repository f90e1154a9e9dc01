//! Angular performance metrics and measurement analysis.

use crate::event::{FeatureId, Modality, ModalitySet, ReferencingEvent, UseCase};
use crate::geometry::{angular_distance, euler_to_direction, yaw_pitch_deg, GeometryError, Vec3};
use crate::math;
use crate::scene::{self, AngularExtent, Scene, SceneError};
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    InvalidInput(String),
    Scene(SceneError),
    Geometry(GeometryError),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::InvalidInput(s) => write!(f, "invalid input: {s}"),
            MetricsError::Scene(e) => write!(f, "{e}"),
            MetricsError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for MetricsError {}

impl From<SceneError> for MetricsError {
    fn from(e: SceneError) -> Self {
        MetricsError::Scene(e)
    }
}

impl From<GeometryError> for MetricsError {
    fn from(e: GeometryError) -> Self {
        MetricsError::Geometry(e)
    }
}

/// Precomputed ground-truth direction and angular extent per (pose, target).
#[derive(Debug, Clone)]
pub struct TargetIndex {
    entries: BTreeMap<(Option<u8>, String), (Vec3, AngularExtent)>,
}

impl TargetIndex {
    pub fn build(scene: &Scene) -> Result<TargetIndex, SceneError> {
        let mut entries = BTreeMap::new();
        match scene.use_case {
            UseCase::Cockpit => {
                for t in &scene.targets {
                    let gt = scene::ground_truth_vector(t, None)?;
                    let extent = scene::angular_extent(t, None)?;
                    entries.insert((None, t.id.clone()), (gt, extent));
                }
            }
            UseCase::Environment => {
                for pose in &scene.poses {
                    for t in &scene.targets {
                        let gt = scene::ground_truth_vector(t, Some(pose))?;
                        let extent = scene::angular_extent(t, Some(pose))?;
                        entries.insert((Some(pose.id), t.id.clone()), (gt, extent));
                    }
                }
            }
        }
        Ok(TargetIndex { entries })
    }

    /// Combined index over both use-case scenes.
    pub fn build_pair(cockpit: &Scene, environment: &Scene) -> Result<TargetIndex, SceneError> {
        let a = TargetIndex::build(cockpit)?;
        let b = TargetIndex::build(environment)?;
        Ok(a.merged(&b))
    }

    /// Union of two indexes; cockpit keys (no pose) and environment keys
    /// (posed) never collide.
    pub fn merged(&self, other: &TargetIndex) -> TargetIndex {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), *v)));
        TargetIndex { entries }
    }

    pub fn lookup(&self, event: &ReferencingEvent) -> Result<&(Vec3, AngularExtent), MetricsError> {
        let key = (event.pose_id, event.target_id.clone());
        self.entries.get(&key).ok_or_else(|| {
            MetricsError::InvalidInput(alloc::format!(
                "no ground truth for target {} (pose {:?})",
                event.target_id,
                event.pose_id
            ))
        })
    }
}

/// Running sums sufficient to compute and pool all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsSums {
    pub sum_ad_deg: f64,
    pub sum_ad_sq: f64,
    pub hits: usize,
    pub n: usize,
}

impl MetricsSums {
    pub fn push(&mut self, ad_deg: f64, hit: bool) {
        self.sum_ad_deg += ad_deg;
        self.sum_ad_sq += ad_deg * ad_deg;
        self.hits += usize::from(hit);
        self.n += 1;
    }

    /// Pools another group's residuals into this one.
    pub fn merge(&mut self, other: &MetricsSums) {
        self.sum_ad_deg += other.sum_ad_deg;
        self.sum_ad_sq += other.sum_ad_sq;
        self.hits += other.hits;
        self.n += other.n;
    }

    pub fn report(&self) -> Result<MetricsReport, MetricsError> {
        if self.n == 0 {
            return Err(MetricsError::InvalidInput("empty prediction set".into()));
        }
        let n = self.n as f64;
        let mad = self.sum_ad_deg / n;
        let var = (self.sum_ad_sq / n - mad * mad).max(0.0);
        Ok(MetricsReport {
            mad_deg: mad,
            std_ad_deg: math::sqrt(var),
            hit_rate: self.hits as f64 / n,
            n: self.n,
            subject: None,
            use_case: None,
            modalities: None,
        })
    }
}

/// Mean angular distance, its population standard deviation, and the hit
/// rate over a prediction set, with optional grouping labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mad_deg: f64,
    pub std_ad_deg: f64,
    /// Fraction of predictions inside the target extent widened by the
    /// 2 deg yaw / 1 deg pitch tolerances.
    pub hit_rate: f64,
    pub n: usize,
    pub subject: Option<String>,
    pub use_case: Option<UseCase>,
    pub modalities: Option<ModalitySet>,
}

/// Per-event angular distance and hit flag for a predicted direction.
pub fn score_prediction(
    dir: Vec3,
    event: &ReferencingEvent,
    index: &TargetIndex,
) -> Result<(f64, bool), MetricsError> {
    let (gt, extent) = index.lookup(event)?;
    let ad = angular_distance(dir, *gt)?;
    let hit = scene::hit_test(dir, extent)?;
    Ok((ad, hit))
}

/// Metrics over a set of (prediction, event) pairs.
pub fn compute_metrics(
    preds: &[(Vec3, &ReferencingEvent)],
    index: &TargetIndex,
) -> Result<MetricsReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::InvalidInput("empty prediction set".into()));
    }
    let mut sums = MetricsSums::default();
    for (dir, event) in preds {
        let (ad, hit) = score_prediction(*dir, event, index)?;
        sums.push(ad, hit);
    }
    sums.report()
}

/// Unsigned deviation statistics for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisDeviation {
    pub mean_deg: f64,
    pub std_deg: f64,
    pub n: usize,
}

fn axis_deviation(values: &[f64]) -> AxisDeviation {
    let n = values.len();
    if n == 0 {
        return AxisDeviation {
            mean_deg: 0.0,
            std_deg: 0.0,
            n: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    AxisDeviation {
        mean_deg: mean,
        std_deg: math::sqrt(var),
        n,
    }
}

/// Measured-direction quality of one modality in one use case: unsigned
/// yaw/pitch deviation from ground truth at the trigger instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRow {
    pub use_case: UseCase,
    pub modality: Modality,
    pub yaw: AxisDeviation,
    pub pitch: AxisDeviation,
}

fn woz_direction(event: &ReferencingEvent, modality: Modality) -> Option<Vec3> {
    let frame = event.woz_frame();
    match modality {
        Modality::Finger => frame
            .is_available(FeatureId::FingerDir)
            .then_some(frame.finger_dir),
        Modality::Eye => frame
            .is_available(FeatureId::EyeDir)
            .then_some(frame.eye_dir),
        Modality::Head => frame
            .is_available(FeatureId::HeadEuler)
            .then(|| euler_to_direction(frame.head_euler)),
    }
}

/// Per-modality, per-use-case deviation statistics at the trigger frame.
/// Events whose modality is untracked at the trigger are skipped for that
/// modality; the analysis works on raw (pre-interpolation) events.
pub fn measurement_analysis(
    events: &[ReferencingEvent],
    index: &TargetIndex,
) -> Result<Vec<MeasurementRow>, MetricsError> {
    if events.is_empty() {
        return Err(MetricsError::InvalidInput("empty dataset".into()));
    }
    let mut rows = Vec::new();
    for use_case in [UseCase::Cockpit, UseCase::Environment] {
        for modality in Modality::ALL {
            let mut yaws = Vec::new();
            let mut pitches = Vec::new();
            for event in events.iter().filter(|e| e.use_case == use_case) {
                let Some(dir) = woz_direction(event, modality) else {
                    continue;
                };
                let (gt, _) = index.lookup(event)?;
                let (gy, gp) = yaw_pitch_deg(*gt)?;
                let (my, mp) = yaw_pitch_deg(dir)?;
                yaws.push(math::abs(math::angle_diff_deg(my, gy)));
                pitches.push(math::abs(mp - gp));
            }
            if yaws.is_empty() {
                continue;
            }
            rows.push(MeasurementRow {
                use_case,
                modality,
                yaw: axis_deviation(&yaws),
                pitch: axis_deviation(&pitches),
            });
        }
    }
    Ok(rows)
}

/// Pitch-angle histogram bins: 1 degree over [-90, 90).
pub const HIST_BINS: usize = 180;
pub const HIST_MIN_DEG: f64 = -90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HistogramSeries {
    FingerPositionPitch,
    FingerDirectionPitch,
    EyeDirectionPitch,
    HeadDirectionPitch,
}

impl HistogramSeries {
    pub const ALL: [HistogramSeries; 4] = [
        HistogramSeries::FingerPositionPitch,
        HistogramSeries::FingerDirectionPitch,
        HistogramSeries::EyeDirectionPitch,
        HistogramSeries::HeadDirectionPitch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            HistogramSeries::FingerPositionPitch => "finger_position_pitch",
            HistogramSeries::FingerDirectionPitch => "finger_direction_pitch",
            HistogramSeries::EyeDirectionPitch => "eye_direction_pitch",
            HistogramSeries::HeadDirectionPitch => "head_direction_pitch",
        }
    }
}

/// Binned pitch distribution of one feature at the trigger instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub use_case: UseCase,
    pub series: HistogramSeries,
    /// Count per 1-degree bin starting at [`HIST_MIN_DEG`].
    pub counts: Vec<u32>,
    pub mean_deg: f64,
    pub std_deg: f64,
    pub n: usize,
}

fn series_pitch(event: &ReferencingEvent, series: HistogramSeries) -> Option<f64> {
    let frame = event.woz_frame();
    let dir = match series {
        HistogramSeries::FingerPositionPitch => frame
            .is_available(FeatureId::FingerTip)
            .then_some(frame.finger_tip),
        HistogramSeries::FingerDirectionPitch => frame
            .is_available(FeatureId::FingerDir)
            .then_some(frame.finger_dir),
        HistogramSeries::EyeDirectionPitch => frame
            .is_available(FeatureId::EyeDir)
            .then_some(frame.eye_dir),
        HistogramSeries::HeadDirectionPitch => frame
            .is_available(FeatureId::HeadEuler)
            .then(|| euler_to_direction(frame.head_euler)),
    }?;
    yaw_pitch_deg(dir).ok().map(|(_, p)| p)
}

/// Pitch distributions of finger position, finger/eye/head direction at the
/// trigger instant, per use case present in the dataset.
pub fn direction_histograms(events: &[ReferencingEvent]) -> Result<Vec<Histogram>, MetricsError> {
    if events.is_empty() {
        return Err(MetricsError::InvalidInput("empty dataset".into()));
    }
    let mut out = Vec::new();
    for use_case in [UseCase::Cockpit, UseCase::Environment] {
        for series in HistogramSeries::ALL {
            let mut counts = alloc::vec![0u32; HIST_BINS];
            let mut values = Vec::new();
            for event in events.iter().filter(|e| e.use_case == use_case) {
                let Some(pitch) = series_pitch(event, series) else {
                    continue;
                };
                values.push(pitch);
                let bin = ((pitch - HIST_MIN_DEG) / 1.0) as isize;
                let bin = bin.clamp(0, HIST_BINS as isize - 1) as usize;
                counts[bin] += 1;
            }
            if values.is_empty() {
                continue;
            }
            let stats = axis_deviation(&values);
            out.push(Histogram {
                use_case,
                series,
                counts,
                mean_deg: stats.mean_deg,
                std_deg: stats.std_deg,
                n: stats.n,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Frame, Hand};
    use crate::geometry::{spherical_to_cartesian, SphericalDir};
    use crate::scene::builtin_cockpit_scene;
    use alloc::string::ToString;
    use alloc::vec;

    fn event_for(target_id: &str, dir: Vec3) -> ReferencingEvent {
        let mut frame = Frame {
            availability: Frame::ALL_AVAILABLE,
            ..Frame::default()
        };
        frame.finger_dir = dir;
        frame.eye_dir = dir;
        frame.finger_tip = dir.scale(0.5);
        let (yaw, pitch) = yaw_pitch_deg(dir).unwrap();
        frame.head_euler = crate::geometry::EulerAngles::new(yaw, pitch, 0.0);
        ReferencingEvent {
            subject_id: "s01".to_string(),
            use_case: UseCase::Cockpit,
            target_id: target_id.to_string(),
            pose_id: None,
            frames: vec![frame; 36],
            woz_index: 18,
            hand: Hand::Right,
        }
    }

    fn rotate(gt: Vec3, delta_yaw: f64, delta_pitch: f64) -> Vec3 {
        let (yaw, pitch) = yaw_pitch_deg(gt).unwrap();
        spherical_to_cartesian(SphericalDir {
            r: 1.0,
            yaw_deg: yaw + delta_yaw,
            pitch_deg: pitch + delta_pitch,
        })
    }

    #[test]
    fn perfect_predictions() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let events: Vec<ReferencingEvent> = scene
            .targets
            .iter()
            .map(|t| {
                let gt = scene::ground_truth_vector(t, None).unwrap();
                event_for(&t.id, gt)
            })
            .collect();
        let preds: Vec<(Vec3, &ReferencingEvent)> = events
            .iter()
            .map(|e| (e.woz_frame().finger_dir, e))
            .collect();
        let report = compute_metrics(&preds, &index).unwrap();
        assert!(report.mad_deg < 1e-9);
        assert_eq!(report.hit_rate, 1.0);
        assert_eq!(report.n, 12);
    }

    #[test]
    fn hand_computed_two_event_stats() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let t = &scene.targets[0];
        let gt = scene::ground_truth_vector(t, None).unwrap();
        let e1 = event_for(&t.id, gt);
        let e2 = event_for(&t.id, gt);
        // Pitch-only offsets turn directly into angular distances.
        let preds = vec![(rotate(gt, 0.0, 10.0), &e1), (rotate(gt, 0.0, -20.0), &e2)];
        let report = compute_metrics(&preds, &index).unwrap();
        assert!((report.mad_deg - 15.0).abs() < 1e-9);
        assert!((report.std_ad_deg - 5.0).abs() < 1e-9);
    }

    #[test]
    fn empty_input_rejected() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        assert!(matches!(
            compute_metrics(&[], &index),
            Err(MetricsError::InvalidInput(_))
        ));
    }

    #[test]
    fn matches_independent_recomputation() {
        // Oracle: single-pass scalar recomputation of all three metrics,
        // written separately from MetricsSums.
        use rand::{Rng, SeedableRng};
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let events: Vec<ReferencingEvent> = (0..50)
            .map(|i| {
                let t = &scene.targets[i % 12];
                let gt = scene::ground_truth_vector(t, None).unwrap();
                event_for(&t.id, gt)
            })
            .collect();
        let preds: Vec<(Vec3, &ReferencingEvent)> = events
            .iter()
            .map(|e| {
                let (gt, _) = index.lookup(e).unwrap();
                let dir = rotate(
                    *gt,
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-4.0..4.0),
                );
                (dir, e)
            })
            .collect();
        let report = compute_metrics(&preds, &index).unwrap();

        let mut ads = Vec::new();
        let mut hits = 0usize;
        for (dir, e) in &preds {
            let (gt, extent) = index.lookup(e).unwrap();
            ads.push(angular_distance(*dir, *gt).unwrap());
            let (yaw, pitch) = yaw_pitch_deg(*dir).unwrap();
            let hit = yaw > extent.yaw_min_deg - 2.0
                && yaw < extent.yaw_max_deg + 2.0
                && pitch > extent.pitch_min_deg - 1.0
                && pitch < extent.pitch_max_deg + 1.0;
            hits += usize::from(hit);
        }
        let mean = ads.iter().sum::<f64>() / ads.len() as f64;
        let var = ads.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / ads.len() as f64;
        assert!((report.mad_deg - mean).abs() < 1e-12);
        assert!((report.std_ad_deg - var.sqrt()).abs() < 1e-12);
        assert!((report.hit_rate - hits as f64 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn tightening_tolerance_never_gains_hits() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let t = &scene.targets[3];
        let gt = scene::ground_truth_vector(t, None).unwrap();
        let (_, extent) = index.lookup(&event_for(&t.id, gt)).unwrap();
        for dy in [-4.0, -2.5, -1.0, 0.0, 1.5, 3.0, 6.0] {
            let dir = rotate(gt, dy, 0.3);
            let with = extent.contains(dir, 2.0, 1.0).unwrap();
            let without = extent.contains(dir, 0.0, 0.0).unwrap();
            assert!(!without || with);
        }
    }

    #[test]
    fn measurement_analysis_hand_computed() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let t = &scene.targets[0];
        let gt = scene::ground_truth_vector(t, None).unwrap();
        // Three events with finger deviations of +3, -5, +10 in yaw.
        let mut events = Vec::new();
        for dy in [3.0, -5.0, 10.0] {
            let mut e = event_for(&t.id, gt);
            let dir = rotate(gt, dy, 0.0);
            for f in e.frames.iter_mut() {
                f.finger_dir = dir;
            }
            events.push(e);
        }
        let rows = measurement_analysis(&events, &index).unwrap();
        let finger = rows
            .iter()
            .find(|r| r.modality == Modality::Finger && r.use_case == UseCase::Cockpit)
            .unwrap();
        let mean = (3.0 + 5.0 + 10.0) / 3.0;
        let var = ((3.0f64 - mean).powi(2) + (5.0 - mean).powi(2) + (10.0 - mean).powi(2)) / 3.0;
        assert!((finger.yaw.mean_deg - mean).abs() < 1e-9);
        assert!((finger.yaw.std_deg - var.sqrt()).abs() < 1e-9);
        assert_eq!(finger.yaw.n, 3);
        // Eye direction was exact in all three events.
        let eye = rows.iter().find(|r| r.modality == Modality::Eye).unwrap();
        assert!(eye.yaw.mean_deg < 1e-9);
        assert!(eye.pitch.mean_deg < 1e-9);
    }

    #[test]
    fn analysis_skips_untracked_trigger_frames() {
        let scene = builtin_cockpit_scene();
        let index = TargetIndex::build(&scene).unwrap();
        let t = &scene.targets[0];
        let gt = scene::ground_truth_vector(t, None).unwrap();
        let mut e1 = event_for(&t.id, gt);
        e1.frames[18].set_available(FeatureId::FingerDir, false);
        let e2 = event_for(&t.id, gt);
        let rows = measurement_analysis(&[e1, e2], &index).unwrap();
        let finger = rows
            .iter()
            .find(|r| r.modality == Modality::Finger)
            .unwrap();
        assert_eq!(finger.yaw.n, 1);
    }

    #[test]
    fn histogram_counts_sum_to_n() {
        let scene = builtin_cockpit_scene();
        let events: Vec<ReferencingEvent> = scene
            .targets
            .iter()
            .map(|t| {
                let gt = scene::ground_truth_vector(t, None).unwrap();
                event_for(&t.id, gt)
            })
            .collect();
        let histograms = direction_histograms(&events).unwrap();
        assert_eq!(histograms.len(), 4);
        for h in &histograms {
            assert_eq!(h.counts.iter().sum::<u32>() as usize, h.n);
            assert_eq!(h.n, 12);
        }
    }
}
