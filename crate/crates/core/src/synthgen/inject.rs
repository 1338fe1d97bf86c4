//! Controlled corruption of scene data while the image stays truthful.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::projection::{back_project_to_terrain, PinholeView};
use crate::scene::{GeoPoint, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    /// Shift road vertices sideways by `magnitude` pixels along the
    /// projected normal.
    VectorOffsetPx,
    /// Remove the target buildings; `magnitude` is unused.
    DeleteBuilding,
    /// Raise the DEM and road altitudes by `magnitude` meters.
    DemBiasM,
    /// Turn the camera heading by `magnitude` degrees.
    CameraYawDeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorInjection {
    pub kind: InjectionKind,
    pub magnitude: f64,
    /// Road segment ids for offsets (empty means all), building ids for
    /// deletion.
    #[serde(default)]
    pub targets: Vec<u32>,
}

impl ErrorInjection {
    pub fn new(kind: InjectionKind, magnitude: f64, targets: Vec<u32>) -> Self {
        Self { kind, magnitude, targets }
    }
}

/// Returns a corrupted copy of `scene`; the input is left untouched.
pub fn inject(scene: &Scene, err: &ErrorInjection) -> Result<Scene> {
    if !err.magnitude.is_finite() {
        return Err(Error::NonFinite("injection magnitude"));
    }
    let mut out = scene.clone();
    match err.kind {
        InjectionKind::VectorOffsetPx => {
            for &id in &err.targets {
                if scene.roads.get(id).is_none() {
                    return Err(Error::UnknownTarget { kind: "road segment", id });
                }
            }
            if err.magnitude == 0.0 {
                return Ok(out);
            }
            let view = PinholeView::of_scene(scene);
            let frame = scene.frame();
            for seg in out.roads.segments.iter_mut() {
                if !err.targets.is_empty() && !err.targets.contains(&seg.id) {
                    continue;
                }
                let pxs: Vec<Option<Vec2>> = seg
                    .polyline
                    .iter()
                    .map(|p| view.project(frame.to_enu(*p)).pixel())
                    .collect();
                let n = pxs.len();
                let mut moved = Vec::with_capacity(n);
                for i in 0..n {
                    let (a, b) = (pxs[i.saturating_sub(1)], pxs[(i + 1).min(n - 1)]);
                    let (Some(here), Some(a), Some(b)) = (pxs[i], a, b) else {
                        return Err(Error::DegenerateCamera(format!("segment {} leaves the view", seg.id)));
                    };
                    let Some(tangent) = (b - a).normalized() else {
                        return Err(Error::DegenerateCamera(format!("segment {} projects to a point", seg.id)));
                    };
                    let target = here + tangent.perp() * err.magnitude;
                    let hit = match back_project_to_terrain(scene, &view, target) {
                        Some(g) => g,
                        // off the grid: keep the vertex altitude
                        None => {
                            let z = frame.to_enu(seg.polyline[i]).z;
                            let ray = view.ray(target);
                            if ray.z >= -1e-12 {
                                return Err(Error::DegenerateCamera(format!(
                                    "offset vertex of segment {} misses the ground",
                                    seg.id
                                )));
                            }
                            frame.to_geo(view.origin + ray * ((z - view.origin.z) / ray.z))
                        }
                    };
                    moved.push(hit);
                }
                seg.polyline = moved;
            }
        }
        InjectionKind::DeleteBuilding => {
            for &id in &err.targets {
                if !scene.buildings.iter().any(|b| b.id == id) {
                    return Err(Error::UnknownTarget { kind: "building", id });
                }
            }
            out.buildings.retain(|b| !err.targets.contains(&b.id));
        }
        InjectionKind::DemBiasM => {
            for h in out.dem.heights.iter_mut() {
                *h += err.magnitude;
            }
            for seg in out.roads.segments.iter_mut() {
                for p in seg.polyline.iter_mut() {
                    *p = GeoPoint::new(p.lat, p.lon, p.alt + err.magnitude);
                }
            }
        }
        InjectionKind::CameraYawDeg => {
            out.camera.yaw_deg += err.magnitude;
        }
    }
    out.validate()?;
    Ok(out)
}
