//! Catalog of referenceable targets: cockpit areas (AOIs) and outside
//! landmarks (POIs), car poses, ground-truth directions, angular extents and
//! hit testing.
//!
//! AOI geometry lives directly in the driver frame. POI geometry is stored
//! as WGS84 corner coordinates and resolved into the driver frame per car
//! pose. Scenes are immutable after construction.

use crate::event::UseCase;
use crate::geometry::{self, normalize, yaw_pitch_deg, GeodeticCoord, GeometryError, Vec3};
use crate::math;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Yaw tolerance in degrees for hit testing.
pub const HIT_TOL_YAW_DEG: f64 = 2.0;
/// Pitch tolerance in degrees for hit testing.
pub const HIT_TOL_PITCH_DEG: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    /// Target has no corners, the wrong corner count, or cannot be resolved.
    InvalidTarget(String),
    /// Scene is empty or structurally inconsistent.
    InvalidScene(String),
    /// A POI was queried without a car pose, or with an unknown pose id.
    PoseRequired(String),
    Geometry(GeometryError),
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::InvalidTarget(t) => write!(f, "invalid target: {t}"),
            SceneError::InvalidScene(s) => write!(f, "invalid scene: {s}"),
            SceneError::PoseRequired(t) => write!(f, "car pose required to resolve target: {t}"),
            SceneError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SceneError {}

impl From<GeometryError> for SceneError {
    fn from(e: GeometryError) -> Self {
        SceneError::Geometry(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    Aoi,
    Poi,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Aoi => "AOI",
            TargetKind::Poi => "POI",
        }
    }
}

/// Corner geometry of a target: measured driver-frame points for AOIs,
/// geodetic points for POIs.
#[derive(Debug, Clone, PartialEq)]
pub enum Corners {
    Driver(Vec<Vec3>),
    Geodetic(Vec<GeodeticCoord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetObject {
    pub id: String,
    pub kind: TargetKind,
    pub corners: Corners,
}

impl TargetObject {
    pub fn aoi(id: &str, corners: Vec<Vec3>) -> Self {
        TargetObject {
            id: id.to_string(),
            kind: TargetKind::Aoi,
            corners: Corners::Driver(corners),
        }
    }

    pub fn poi(id: &str, corners: Vec<GeodeticCoord>) -> Self {
        TargetObject {
            id: id.to_string(),
            kind: TargetKind::Poi,
            corners: Corners::Geodetic(corners),
        }
    }

    /// AOIs carry at least 3 measured corner points; POIs exactly the 8 box
    /// corners.
    pub fn validate(&self) -> Result<(), SceneError> {
        match (&self.kind, &self.corners) {
            (TargetKind::Aoi, Corners::Driver(c)) if c.len() >= 3 => Ok(()),
            (TargetKind::Poi, Corners::Geodetic(c)) if c.len() == 8 => Ok(()),
            (TargetKind::Aoi, Corners::Driver(_)) => Err(SceneError::InvalidTarget(
                alloc::format!("{}: AOI needs at least 3 corners", self.id),
            )),
            (TargetKind::Poi, Corners::Geodetic(_)) => Err(SceneError::InvalidTarget(
                alloc::format!("{}: POI needs exactly 8 corners", self.id),
            )),
            _ => Err(SceneError::InvalidTarget(alloc::format!(
                "{}: corner frame does not match target kind",
                self.id
            ))),
        }
    }

    /// Corner points in the driver frame, resolving geodetic corners through
    /// the given car pose.
    pub fn driver_corners(&self, pose: Option<&CarPose>) -> Result<Vec<Vec3>, SceneError> {
        if match &self.corners {
            Corners::Driver(c) => c.is_empty(),
            Corners::Geodetic(c) => c.is_empty(),
        } {
            return Err(SceneError::InvalidTarget(alloc::format!(
                "{}: empty corner list",
                self.id
            )));
        }
        match &self.corners {
            Corners::Driver(c) => Ok(c.clone()),
            Corners::Geodetic(c) => {
                let pose = pose.ok_or_else(|| SceneError::PoseRequired(self.id.clone()))?;
                let t = pose.transform();
                Ok(c.iter()
                    .map(|g| t.apply(geometry::geodetic_to_ecef(*g)))
                    .collect())
            }
        }
    }

    /// Arithmetic mean of the driver-frame corners.
    pub fn centroid(&self, pose: Option<&CarPose>) -> Result<Vec3, SceneError> {
        let corners = self.driver_corners(pose)?;
        let n = corners.len() as f64;
        let sum = corners.iter().fold(Vec3::ZERO, |acc, c| acc.add(*c));
        Ok(sum.scale(1.0 / n))
    }
}

/// A stationary vehicle position and compass heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarPose {
    pub id: u8,
    pub position: GeodeticCoord,
    /// Compass heading of the forward axis, degrees clockwise from north,
    /// in (-180, 180].
    pub heading_deg: f64,
}

impl CarPose {
    pub fn new(id: u8, position: GeodeticCoord, heading_deg: f64) -> Self {
        CarPose {
            id,
            position,
            heading_deg: math::wrap_deg(heading_deg),
        }
    }

    /// ECEF -> driver-frame transform for this pose.
    pub fn transform(&self) -> geometry::AffineTransform {
        geometry::car_frame_transform(self.position, self.heading_deg)
    }
}

/// Yaw/pitch bounding box of a target as seen from the driver-frame origin,
/// degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularExtent {
    pub yaw_min_deg: f64,
    pub yaw_max_deg: f64,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
}

impl AngularExtent {
    /// True when the direction falls inside the extent widened by the given
    /// tolerances. Bounds are strict.
    pub fn contains(
        &self,
        dir: Vec3,
        tol_yaw_deg: f64,
        tol_pitch_deg: f64,
    ) -> Result<bool, GeometryError> {
        let (yaw, pitch) = yaw_pitch_deg(dir)?;
        Ok(yaw > self.yaw_min_deg - tol_yaw_deg
            && yaw < self.yaw_max_deg + tol_yaw_deg
            && pitch > self.pitch_min_deg - tol_pitch_deg
            && pitch < self.pitch_max_deg + tol_pitch_deg)
    }

    /// Boundary-inclusive containment at zero tolerance.
    pub fn contains_inclusive(&self, dir: Vec3) -> Result<bool, GeometryError> {
        let (yaw, pitch) = yaw_pitch_deg(dir)?;
        Ok(yaw >= self.yaw_min_deg
            && yaw <= self.yaw_max_deg
            && pitch >= self.pitch_min_deg
            && pitch <= self.pitch_max_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub use_case: UseCase,
    pub targets: Vec<TargetObject>,
    pub poses: Vec<CarPose>,
    /// Target ids visible from each pose. Empty for cockpit scenes; every
    /// pose id present in environment scenes.
    pub visibility: BTreeMap<u8, Vec<String>>,
}

impl Scene {
    /// Structural validation: unique ids, per-kind corner counts, cockpit
    /// scenes free of pose dependence, visibility referencing known ids.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.targets.is_empty() {
            return Err(SceneError::InvalidScene("no targets".to_string()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for t in &self.targets {
            t.validate()?;
            if seen.contains(&t.id.as_str()) {
                return Err(SceneError::InvalidScene(alloc::format!(
                    "duplicate target id: {}",
                    t.id
                )));
            }
            seen.push(&t.id);
        }
        match self.use_case {
            UseCase::Cockpit => {
                if !self.poses.is_empty() || !self.visibility.is_empty() {
                    return Err(SceneError::InvalidScene(
                        "cockpit scene must not depend on car poses".to_string(),
                    ));
                }
                if self.targets.iter().any(|t| t.kind != TargetKind::Aoi) {
                    return Err(SceneError::InvalidScene(
                        "cockpit scene may contain only AOIs".to_string(),
                    ));
                }
            }
            UseCase::Environment => {
                if self.poses.is_empty() {
                    return Err(SceneError::InvalidScene(
                        "environment scene needs at least one car pose".to_string(),
                    ));
                }
                let mut pose_ids: Vec<u8> = Vec::new();
                for p in &self.poses {
                    if pose_ids.contains(&p.id) {
                        return Err(SceneError::InvalidScene(alloc::format!(
                            "duplicate pose id: {}",
                            p.id
                        )));
                    }
                    pose_ids.push(p.id);
                }
                for (pid, ids) in &self.visibility {
                    if !pose_ids.contains(pid) {
                        return Err(SceneError::InvalidScene(alloc::format!(
                            "visibility references unknown pose {pid}"
                        )));
                    }
                    for id in ids {
                        if !seen.contains(&id.as_str()) {
                            return Err(SceneError::InvalidScene(alloc::format!(
                                "visibility references unknown target {id}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn target(&self, id: &str) -> Result<&TargetObject, SceneError> {
        self.targets
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| SceneError::InvalidTarget(alloc::format!("unknown target: {id}")))
    }

    pub fn pose(&self, id: u8) -> Result<&CarPose, SceneError> {
        self.poses
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| SceneError::PoseRequired(alloc::format!("unknown pose id: {id}")))
    }

    /// Targets selectable from the given pose. Cockpit scenes ignore the
    /// pose; environment scenes consult the per-pose visibility list (all
    /// targets when no list is declared for the pose).
    pub fn visible_targets(&self, pose_id: Option<u8>) -> Vec<&TargetObject> {
        match (self.use_case, pose_id) {
            (UseCase::Environment, Some(pid)) => match self.visibility.get(&pid) {
                Some(ids) => self
                    .targets
                    .iter()
                    .filter(|t| ids.iter().any(|i| i == &t.id))
                    .collect(),
                None => self.targets.iter().collect(),
            },
            _ => self.targets.iter().collect(),
        }
    }

    /// All (pose, target) pairs a driver can be asked to reference: one pair
    /// per target for cockpit scenes, per-pose visible targets otherwise.
    pub fn referencing_pairs(&self) -> Vec<(Option<u8>, &TargetObject)> {
        match self.use_case {
            UseCase::Cockpit => self.targets.iter().map(|t| (None, t)).collect(),
            UseCase::Environment => {
                let mut out = Vec::new();
                for pose in &self.poses {
                    for t in self.visible_targets(Some(pose.id)) {
                        out.push((Some(pose.id), t));
                    }
                }
                out
            }
        }
    }
}

/// Unit vector from the driver-frame origin to the target centroid.
pub fn ground_truth_vector(
    target: &TargetObject,
    pose: Option<&CarPose>,
) -> Result<Vec3, SceneError> {
    let c = target.centroid(pose)?;
    Ok(normalize(c)?)
}

/// Min/max yaw and pitch over the target's corner directions.
pub fn angular_extent(
    target: &TargetObject,
    pose: Option<&CarPose>,
) -> Result<AngularExtent, SceneError> {
    let corners = target.driver_corners(pose)?;
    let mut yaw_min = f64::INFINITY;
    let mut yaw_max = f64::NEG_INFINITY;
    let mut pitch_min = f64::INFINITY;
    let mut pitch_max = f64::NEG_INFINITY;
    for c in &corners {
        let (yaw, pitch) = yaw_pitch_deg(*c)?;
        yaw_min = yaw_min.min(yaw);
        yaw_max = yaw_max.max(yaw);
        pitch_min = pitch_min.min(pitch);
        pitch_max = pitch_max.max(pitch);
    }
    Ok(AngularExtent {
        yaw_min_deg: yaw_min,
        yaw_max_deg: yaw_max,
        pitch_min_deg: pitch_min,
        pitch_max_deg: pitch_max,
    })
}

/// Hit test with the standard 2 deg yaw / 1 deg pitch tolerances.
pub fn hit_test(dir: Vec3, extent: &AngularExtent) -> Result<bool, GeometryError> {
    extent.contains(dir, HIT_TOL_YAW_DEG, HIT_TOL_PITCH_DEG)
}

/// Id of the visible target whose ground-truth direction is closest to
/// `dir` by cosine similarity; ties break toward the lexicographically
/// smaller id.
pub fn resolve_nearest(
    dir: Vec3,
    scene: &Scene,
    pose_id: Option<u8>,
) -> Result<String, SceneError> {
    let unit = normalize(dir)?;
    let pose = match pose_id {
        Some(pid) => Some(*scene.pose(pid)?),
        None => None,
    };
    let candidates = scene.visible_targets(pose_id);
    if candidates.is_empty() {
        return Err(SceneError::InvalidScene("no visible targets".to_string()));
    }
    let mut best: Option<(&str, f64)> = None;
    for t in candidates {
        let gt = ground_truth_vector(t, pose.as_ref())?;
        let cos = unit.dot(gt);
        best = match best {
            None => Some((&t.id, cos)),
            Some((bid, bcos)) => {
                if cos > bcos || (cos == bcos && t.id.as_str() < bid) {
                    Some((&t.id, cos))
                } else {
                    Some((bid, bcos))
                }
            }
        };
    }
    Ok(best.expect("non-empty candidates").0.to_string())
}

/// Axis-aligned rectangle in the y-z plane (a vertical panel facing the
/// driver), 4 corners.
fn panel_yz(center: Vec3, half_y: f64, half_z: f64) -> Vec<Vec3> {
    alloc::vec![
        Vec3::new(center.x, center.y - half_y, center.z - half_z),
        Vec3::new(center.x, center.y + half_y, center.z - half_z),
        Vec3::new(center.x, center.y + half_y, center.z + half_z),
        Vec3::new(center.x, center.y - half_y, center.z + half_z),
    ]
}

/// Axis-aligned rectangle in the x-y plane (a horizontal console surface),
/// 4 corners.
fn panel_xy(center: Vec3, half_x: f64, half_y: f64) -> Vec<Vec3> {
    alloc::vec![
        Vec3::new(center.x - half_x, center.y - half_y, center.z),
        Vec3::new(center.x + half_x, center.y - half_y, center.z),
        Vec3::new(center.x + half_x, center.y + half_y, center.z),
        Vec3::new(center.x - half_x, center.y + half_y, center.z),
    ]
}

/// The built-in cockpit scene: 12 control areas at realistic driver-frame
/// locations (left-hand-drive layout; center console to the driver's right,
/// door controls to the left). Sizes and distances keep the short-range
/// geometry regime in which cockpit targets subtend large angles.
pub fn builtin_cockpit_scene() -> Scene {
    let targets = alloc::vec![
        TargetObject::aoi("aoi-01", panel_xy(Vec3::new(0.70, -0.32, 0.15), 0.06, 0.04)),
        TargetObject::aoi("aoi-02", panel_xy(Vec3::new(0.60, -0.38, 0.16), 0.05, 0.04)),
        TargetObject::aoi("aoi-03", panel_xy(Vec3::new(0.40, -0.34, 0.10), 0.08, 0.05)),
        TargetObject::aoi("aoi-04", panel_yz(Vec3::new(1.02, -0.22, 0.62), 0.14, 0.08)),
        TargetObject::aoi("aoi-05", panel_yz(Vec3::new(0.98, -0.25, 0.45), 0.10, 0.04)),
        TargetObject::aoi("aoi-06", panel_yz(Vec3::new(1.02, 0.00, 0.60), 0.15, 0.06)),
        TargetObject::aoi("aoi-07", panel_yz(Vec3::new(1.12, -0.02, 0.72), 0.10, 0.04)),
        TargetObject::aoi("aoi-08", panel_yz(Vec3::new(0.98, 0.34, 0.56), 0.06, 0.04)),
        TargetObject::aoi("aoi-09", panel_xy(Vec3::new(0.52, 0.55, 0.28), 0.07, 0.04)),
        TargetObject::aoi("aoi-10", panel_yz(Vec3::new(0.88, 0.28, 0.38), 0.05, 0.04)),
        TargetObject::aoi("aoi-11", panel_xy(Vec3::new(0.78, 0.24, 0.12), 0.06, 0.05)),
        TargetObject::aoi("aoi-12", panel_yz(Vec3::new(0.92, -0.08, 1.02), 0.12, 0.04)),
    ];
    Scene {
        use_case: UseCase::Cockpit,
        targets,
        poses: Vec::new(),
        visibility: BTreeMap::new(),
    }
}

/// Anchor of the built-in environment scene's local layout (car pose 1).
const ENV_ANCHOR: GeodeticCoord = GeodeticCoord::new(48.220446, 11.724796, 500.0);

/// Geodetic point at a local east/north/up offset (meters) from the anchor.
fn env_offset(east: f64, north: f64, up: f64) -> GeodeticCoord {
    let (e, n, u) = geometry::enu_basis(ENV_ANCHOR);
    let p = geometry::geodetic_to_ecef(ENV_ANCHOR)
        .add(e.scale(east))
        .add(n.scale(north))
        .add(u.scale(up));
    geometry::ecef_to_geodetic(p)
}

/// 8 geodetic corners of a box footprint centered at (east, north) with the
/// given half-widths and height above local ground.
fn poi_box(east: f64, north: f64, half_e: f64, half_n: f64, height: f64) -> Vec<GeodeticCoord> {
    let mut corners = Vec::with_capacity(8);
    for &u in &[0.0, height] {
        for &(de, dn) in &[
            (-half_e, -half_n),
            (half_e, -half_n),
            (half_e, half_n),
            (-half_e, half_n),
        ] {
            corners.push(env_offset(east + de, north + dn, u));
        }
    }
    corners
}

/// The built-in environment scene: 5 landmark boxes 60-150 m ahead of four
/// measured car poses. Pose 4 stands inside the landmark field and sees only
/// three of the five targets, for 18 referencing directions in total.
pub fn builtin_environment_scene() -> Scene {
    let targets = alloc::vec![
        TargetObject::poi("poi-1", poi_box(15.0, 145.0, 15.0, 10.0, 22.0)),
        TargetObject::poi("poi-2", poi_box(-55.0, 120.0, 3.0, 3.0, 35.0)),
        TargetObject::poi("poi-3", poi_box(80.0, 115.0, 20.0, 12.5, 12.0)),
        TargetObject::poi("poi-4", poi_box(-85.0, 85.0, 7.5, 7.5, 28.0)),
        TargetObject::poi("poi-5", poi_box(25.0, 55.0, 7.0, 5.0, 7.0)),
    ];
    let poses = alloc::vec![
        CarPose::new(1, GeodeticCoord::new(48.220446, 11.724796, 500.0), 0.0),
        CarPose::new(2, GeodeticCoord::new(48.220363, 11.724800, 500.0), -30.0),
        CarPose::new(3, GeodeticCoord::new(48.220333, 11.724782, 500.0), 25.0),
        CarPose::new(4, GeodeticCoord::new(48.221293, 11.724942, 500.0), 0.0),
    ];
    let mut visibility = BTreeMap::new();
    let all: Vec<String> = targets.iter().map(|t| t.id.clone()).collect();
    visibility.insert(1, all.clone());
    visibility.insert(2, all.clone());
    visibility.insert(3, all);
    visibility.insert(
        4,
        alloc::vec![
            "poi-1".to_string(),
            "poi-2".to_string(),
            "poi-3".to_string()
        ],
    );
    Scene {
        use_case: UseCase::Environment,
        targets,
        poses,
        visibility,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_distance;

    #[test]
    fn builtin_cockpit_shape() {
        let s = builtin_cockpit_scene();
        s.validate().unwrap();
        assert_eq!(s.targets.len(), 12);
        assert!(s.targets.iter().all(|t| t.kind == TargetKind::Aoi));
        assert_eq!(s.referencing_pairs().len(), 12);
    }

    #[test]
    fn builtin_environment_shape() {
        let s = builtin_environment_scene();
        s.validate().unwrap();
        assert_eq!(s.targets.len(), 5);
        assert_eq!(s.poses.len(), 4);
        assert_eq!(s.referencing_pairs().len(), 18);
    }

    #[test]
    fn environment_targets_reachable() {
        // Every visible (pose, target) pair must sit in the forward
        // hemisphere, comfortably inside arm range.
        let s = builtin_environment_scene();
        for (pose_id, target) in s.referencing_pairs() {
            let pose = s.pose(pose_id.unwrap()).unwrap();
            let gt = ground_truth_vector(target, Some(pose)).unwrap();
            let (yaw, pitch) = yaw_pitch_deg(gt).unwrap();
            assert!(
                yaw.abs() < 80.0,
                "{} from pose {} at yaw {yaw:.1}",
                target.id,
                pose.id
            );
            assert!(pitch.abs() < 45.0);
        }
    }

    #[test]
    fn gt_symmetric_corner_set() {
        // Corners placed symmetrically around (1, 0, -1) average back to it.
        let t = TargetObject::aoi(
            "sym",
            alloc::vec![
                Vec3::new(1.1, 0.1, -1.0),
                Vec3::new(0.9, -0.1, -1.0),
                Vec3::new(1.0, 0.1, -0.9),
                Vec3::new(1.0, -0.1, -1.1),
            ],
        );
        let gt = ground_truth_vector(&t, None).unwrap();
        let expect = normalize(Vec3::new(1.0, 0.0, -1.0)).unwrap();
        assert!(gt.sub(expect).norm() < 1e-12);
        assert!((gt.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gt_empty_corners_rejected() {
        let t = TargetObject::aoi("empty", alloc::vec![]);
        assert!(matches!(
            ground_truth_vector(&t, None),
            Err(SceneError::InvalidTarget(_))
        ));
    }

    #[test]
    fn extent_square_panel() {
        // 0.2 m square panel 1 m ahead: yaw extent is atan(0.1/1), pitch
        // extent atan(0.1/hypot(1, 0.1)) under the spherical convention.
        let t = TargetObject::aoi("sq", panel_yz(Vec3::new(1.0, 0.0, 0.0), 0.1, 0.1));
        let e = angular_extent(&t, None).unwrap();
        let yaw_half = (0.1f64).atan2(1.0).to_degrees();
        let pitch_half = (0.1f64).atan2((1.0f64 + 0.01).sqrt()).to_degrees();
        assert!((e.yaw_max_deg - yaw_half).abs() < 1e-9);
        assert!((e.yaw_min_deg + yaw_half).abs() < 1e-9);
        assert!((e.pitch_max_deg - pitch_half).abs() < 1e-9);
        assert!((e.pitch_min_deg + pitch_half).abs() < 1e-9);
        assert!((yaw_half - 5.7106).abs() < 1e-3);
    }

    #[test]
    fn extent_single_point_degenerate() {
        let t = TargetObject::aoi(
            "pt",
            alloc::vec![
                Vec3::new(1.0, 0.2, 0.1),
                Vec3::new(1.0, 0.2, 0.1),
                Vec3::new(1.0, 0.2, 0.1)
            ],
        );
        let e = angular_extent(&t, None).unwrap();
        assert_eq!(e.yaw_min_deg, e.yaw_max_deg);
        assert_eq!(e.pitch_min_deg, e.pitch_max_deg);
    }

    #[test]
    fn hit_test_boundary_examples() {
        let extent = AngularExtent {
            yaw_min_deg: 10.0,
            yaw_max_deg: 20.0,
            pitch_min_deg: 0.0,
            pitch_max_deg: 5.0,
        };
        let dir = |yaw: f64, pitch: f64| {
            geometry::spherical_to_cartesian(geometry::SphericalDir {
                r: 1.0,
                yaw_deg: yaw,
                pitch_deg: pitch,
            })
        };
        assert!(hit_test(dir(21.5, 2.0), &extent).unwrap());
        assert!(!hit_test(dir(22.5, 2.0), &extent).unwrap());
        // The widened bound is strict: exactly 22.0 is out.
        assert!(!hit_test(dir(22.0, 2.0), &extent).unwrap());
        assert!(!hit_test(dir(15.0, 6.5), &extent).unwrap());
        assert!(hit_test(dir(15.0, 5.9), &extent).unwrap());
        assert!(hit_test(Vec3::ZERO, &extent).is_err());
    }

    #[test]
    fn builtin_targets_contain_own_ground_truth() {
        let s = builtin_cockpit_scene();
        for t in &s.targets {
            let gt = ground_truth_vector(t, None).unwrap();
            let e = angular_extent(t, None).unwrap();
            assert!(hit_test(gt, &e).unwrap(), "{}", t.id);
        }
        let s = builtin_environment_scene();
        for (pid, t) in s.referencing_pairs() {
            let pose = s.pose(pid.unwrap()).unwrap();
            let gt = ground_truth_vector(t, Some(pose)).unwrap();
            let e = angular_extent(t, Some(pose)).unwrap();
            assert!(
                e.contains_inclusive(gt).unwrap(),
                "{} pose {}",
                t.id,
                pose.id
            );
        }
    }

    #[test]
    fn poi_ground_truth_independent_recomputation() {
        // Independent path: transform each corner separately with scalar
        // dot products, then average, instead of centroid-then-transform.
        let s = builtin_environment_scene();
        let pose = s.pose(1).unwrap();
        let target = s.target("poi-1").unwrap();
        let gt = ground_truth_vector(target, Some(pose)).unwrap();

        let t = pose.transform();
        let corners = match &target.corners {
            Corners::Geodetic(c) => c,
            _ => unreachable!(),
        };
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for g in corners {
            let e = geometry::geodetic_to_ecef(*g);
            let r = &t.rotation;
            sx += r[0][0] * e.x + r[0][1] * e.y + r[0][2] * e.z + t.translation.x;
            sy += r[1][0] * e.x + r[1][1] * e.y + r[1][2] * e.z + t.translation.y;
            sz += r[2][0] * e.x + r[2][1] * e.y + r[2][2] * e.z + t.translation.z;
        }
        let n = corners.len() as f64;
        let mean = Vec3::new(sx / n, sy / n, sz / n);
        let expect = normalize(mean).unwrap();
        assert!(gt.sub(expect).norm() < 1e-9);
    }

    #[test]
    fn resolve_nearest_examples() {
        let s = builtin_cockpit_scene();
        let t = s.target("aoi-06").unwrap();
        let gt = ground_truth_vector(t, None).unwrap();
        assert_eq!(resolve_nearest(gt, &s, None).unwrap(), "aoi-06");
        // Positive rescaling does not change the answer.
        assert_eq!(resolve_nearest(gt.scale(17.5), &s, None).unwrap(), "aoi-06");
    }

    #[test]
    fn resolve_nearest_tie_breaks_lexicographically() {
        let mut s = builtin_cockpit_scene();
        s.targets = alloc::vec![
            TargetObject::aoi("b", panel_yz(Vec3::new(1.0, -0.2, 0.0), 0.05, 0.05)),
            TargetObject::aoi("a", panel_yz(Vec3::new(1.0, 0.2, 0.0), 0.05, 0.05)),
        ];
        // Exactly on the bisector of two mirror-image targets.
        let id = resolve_nearest(Vec3::new(1.0, 0.0, 0.0), &s, None).unwrap();
        assert_eq!(id, "a");
    }

    #[test]
    fn resolve_nearest_respects_visibility() {
        let s = builtin_environment_scene();
        let pose = s.pose(4).unwrap();
        // poi-5 is not visible from pose 4, so even its own ground-truth
        // direction resolves to one of the visible landmarks.
        let t = s.target("poi-5").unwrap();
        let gt = ground_truth_vector(t, Some(pose)).unwrap();
        let id = resolve_nearest(gt, &s, Some(4)).unwrap();
        assert_ne!(id, "poi-5");
    }

    #[test]
    fn resolve_nearest_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let s = builtin_cockpit_scene();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let dir = Vec3::new(
                rng.random_range(0.2..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..1.2),
            );
            let resolved = resolve_nearest(dir, &s, None).unwrap();
            // Oracle: exhaustive minimization of angular distance.
            let best = s
                .targets
                .iter()
                .map(|t| {
                    let gt = ground_truth_vector(t, None).unwrap();
                    (t.id.clone(), angular_distance(dir, gt).unwrap())
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(resolved, best.0);
        }
    }
}
