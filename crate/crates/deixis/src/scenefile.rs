//! Scene file format: a single JSON document listing targets (driver-frame
//! corners for AOIs, geodetic corners for POIs), car poses and per-pose
//! visibility. Positions are meters, angles and coordinates degrees, as
//! recorded in the `units` header field.

use crate::error::{AppError, Result};
use deixis_core::event::UseCase;
use deixis_core::geometry::{GeodeticCoord, Vec3};
use deixis_core::scene::{CarPose, Corners, Scene, TargetKind, TargetObject};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const UNITS: &str = "meters/degrees";

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    format_version: u32,
    units: String,
    use_case: String,
    targets: Vec<TargetEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    poses: Vec<PoseEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    visibility: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetEntry {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corners: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geodetic_corners: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseEntry {
    id: u8,
    lat: f64,
    lon: f64,
    h: f64,
    heading: f64,
}

fn use_case_str(u: UseCase) -> &'static str {
    u.as_str()
}

pub fn parse_use_case(s: &str) -> Option<UseCase> {
    match s {
        "cockpit" => Some(UseCase::Cockpit),
        "environment" => Some(UseCase::Environment),
        _ => None,
    }
}

fn to_file(scene: &Scene) -> SceneFile {
    let targets = scene
        .targets
        .iter()
        .map(|t| {
            let (corners, geodetic_corners) = match &t.corners {
                Corners::Driver(c) => (Some(c.iter().map(|v| [v.x, v.y, v.z]).collect()), None),
                Corners::Geodetic(c) => (
                    None,
                    Some(
                        c.iter()
                            .map(|g| [g.lat_deg, g.lon_deg, g.height_m])
                            .collect(),
                    ),
                ),
            };
            TargetEntry {
                id: t.id.clone(),
                kind: t.kind.as_str().to_string(),
                corners,
                geodetic_corners,
            }
        })
        .collect();
    let poses = scene
        .poses
        .iter()
        .map(|p| PoseEntry {
            id: p.id,
            lat: p.position.lat_deg,
            lon: p.position.lon_deg,
            h: p.position.height_m,
            heading: p.heading_deg,
        })
        .collect();
    let visibility = scene
        .visibility
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    SceneFile {
        format_version: SCENE_FORMAT_VERSION,
        units: UNITS.to_string(),
        use_case: use_case_str(scene.use_case).to_string(),
        targets,
        poses,
        visibility,
    }
}

fn from_file(file: SceneFile, path: &Path) -> Result<Scene> {
    if file.format_version != SCENE_FORMAT_VERSION {
        return Err(AppError::parse(
            path,
            format!(
                "unsupported format_version {} (expected {SCENE_FORMAT_VERSION})",
                file.format_version
            ),
        ));
    }
    let use_case = parse_use_case(&file.use_case).ok_or_else(|| {
        AppError::parse(
            path,
            format!("field use_case: unknown value {:?}", file.use_case),
        )
    })?;
    let mut targets = Vec::with_capacity(file.targets.len());
    for entry in file.targets {
        let kind = match entry.kind.as_str() {
            "AOI" => TargetKind::Aoi,
            "POI" => TargetKind::Poi,
            other => {
                return Err(AppError::parse(
                    path,
                    format!("target {}: field kind: unknown value {other:?}", entry.id),
                ))
            }
        };
        let corners = match (kind, entry.corners, entry.geodetic_corners) {
            (TargetKind::Aoi, Some(c), None) => {
                Corners::Driver(c.into_iter().map(|[x, y, z]| Vec3::new(x, y, z)).collect())
            }
            (TargetKind::Poi, None, Some(c)) => Corners::Geodetic(
                c.into_iter()
                    .map(|[lat, lon, h]| GeodeticCoord::new(lat, lon, h))
                    .collect(),
            ),
            _ => {
                return Err(AppError::parse(
                    path,
                    format!(
                        "target {}: AOIs need field corners, POIs field geodetic_corners",
                        entry.id
                    ),
                ))
            }
        };
        targets.push(TargetObject {
            id: entry.id,
            kind,
            corners,
        });
    }
    let poses = file
        .poses
        .into_iter()
        .map(|p| CarPose::new(p.id, GeodeticCoord::new(p.lat, p.lon, p.h), p.heading))
        .collect();
    let mut visibility = BTreeMap::new();
    for (k, v) in file.visibility {
        let pid: u8 = k.parse().map_err(|_| {
            AppError::parse(path, format!("visibility: pose key {k:?} is not a pose id"))
        })?;
        visibility.insert(pid, v);
    }
    let scene = Scene {
        use_case,
        targets,
        poses,
        visibility,
    };
    scene
        .validate()
        .map_err(|e| AppError::parse(path, e.to_string()))?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let file = to_file(scene);
    let json = serde_json::to_string_pretty(&file).map_err(|e| AppError::parse_json(path, &e))?;
    std::fs::write(path, json + "\n").map_err(|e| AppError::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| AppError::parse_json(path, &e))?;
    from_file(file, path)
}

/// Resolves a scene argument: a builtin name (`builtin:cockpit`,
/// `builtin:environment`) or a file path.
pub fn resolve_scene(spec: &str) -> Result<Scene> {
    match spec {
        "builtin:cockpit" => Ok(deixis_core::scene::builtin_cockpit_scene()),
        "builtin:environment" => Ok(deixis_core::scene::builtin_environment_scene()),
        path => load_scene(Path::new(path)),
    }
}
