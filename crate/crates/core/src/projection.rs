//! Terrain- and occlusion-aware projection of road vectors into the image,
//! and the per-sample primary/normal frame used by the descriptors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{point_in_polygon, segment_intersection, Vec2, Vec3};
use crate::scene::{Camera, GeoPoint, LocalFrame, RoadSegment, Scene};

/// Near clipping depth in meters for behind-camera polyline spans.
pub const NEAR_DEPTH_M: f64 = 0.1;
/// Hits closer than this to the target point do not occlude it.
pub const SURFACE_TOLERANCE_M: f64 = 1e-6;
/// Terrain must rise this far above a line of sight to block it.
const TERRAIN_TOLERANCE_M: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projected {
    Image(Vec2),
    BehindCamera,
}

impl Projected {
    pub fn pixel(self) -> Option<Vec2> {
        match self {
            Projected::Image(p) => Some(p),
            Projected::BehindCamera => None,
        }
    }
}

/// A camera resolved into the scene's local ENU frame.
#[derive(Debug, Clone, Copy)]
pub struct PinholeView {
    pub origin: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeView {
    pub fn new(camera: &Camera, frame: &LocalFrame) -> Self {
        let [right, down, forward] = camera.axes();
        Self {
            origin: frame.to_enu(camera.position),
            right,
            down,
            forward,
            focal: camera.focal_px,
            cx: camera.principal[0],
            cy: camera.principal[1],
            width: camera.width(),
            height: camera.height(),
        }
    }

    pub fn of_scene(scene: &Scene) -> Self {
        Self::new(&scene.camera, &scene.frame())
    }

    /// Coordinates in the camera frame: (right, down, depth).
    pub fn camera_coords(&self, p: Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(self.right), d.dot(self.down), d.dot(self.forward))
    }

    pub fn depth(&self, p: Vec3) -> f64 {
        (p - self.origin).dot(self.forward)
    }

    pub fn project(&self, p: Vec3) -> Projected {
        let c = self.camera_coords(p);
        if c.z <= 0.0 {
            return Projected::BehindCamera;
        }
        Projected::Image(self.camera_to_pixel(c))
    }

    fn camera_to_pixel(&self, c: Vec3) -> Vec2 {
        Vec2::new(self.cx + self.focal * c.x / c.z, self.cy + self.focal * c.y / c.z)
    }

    /// Unit ray direction (ENU) through pixel `px`.
    pub fn ray(&self, px: Vec2) -> Vec3 {
        (self.right * ((px.x - self.cx) / self.focal)
            + self.down * ((px.y - self.cy) / self.focal)
            + self.forward)
            .normalized()
    }

    /// Point on the ray through `px` at the given camera depth.
    pub fn back_project_at_depth(&self, px: Vec2, depth: f64) -> Vec3 {
        let r = self.ray(px);
        self.origin + r * (depth / r.dot(self.forward))
    }

    /// Pixel centers sit at integer coordinates.
    pub fn contains(&self, px: Vec2) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= (self.width - 1) as f64
            && px.y <= (self.height - 1) as f64
    }
}

pub fn project_point(camera: &Camera, frame: &LocalFrame, p: GeoPoint) -> Projected {
    PinholeView::new(camera, frame).project(frame.to_enu(p))
}

struct Prism {
    ring: Vec<Vec2>,
    bottom: f64,
    top: f64,
}

/// Line-of-sight tester against building prisms and the terrain.
pub struct OcclusionTester<'a> {
    scene: &'a Scene,
    frame: LocalFrame,
    camera: Vec3,
    prisms: Vec<Prism>,
    terrain_step: f64,
    terrain_top: f64,
}

impl<'a> OcclusionTester<'a> {
    pub fn new(scene: &'a Scene) -> Self {
        let frame = scene.frame();
        let prisms = scene
            .buildings
            .iter()
            .map(|b| Prism {
                ring: b
                    .footprint
                    .iter()
                    .map(|v| frame.to_enu(GeoPoint::new(v.lat, v.lon, 0.0)).xy())
                    .collect(),
                bottom: b.base_alt,
                top: b.top_alt(),
            })
            .collect();
        let (cn, ce) = scene.cell_meters();
        Self {
            scene,
            frame,
            camera: frame.to_enu(scene.camera.position),
            prisms,
            terrain_step: 0.5 * cn.min(ce),
            terrain_top: scene.dem.max_height(),
        }
    }

    pub fn is_occluded(&self, p: GeoPoint) -> bool {
        self.is_occluded_enu(self.frame.to_enu(p))
    }

    pub fn is_occluded_enu(&self, p: Vec3) -> bool {
        self.blocked_by_building(p) || self.blocked_by_terrain(p)
    }

    /// True when the open segment camera->p enters any prism before
    /// reaching p (hits within 1e-6 m of p count as visible).
    pub fn blocked_by_building(&self, p: Vec3) -> bool {
        let c = self.camera;
        let d = p - c;
        let len = d.norm();
        let counts = |t: f64| t > 0.0 && t < 1.0 && (1.0 - t) * len > SURFACE_TOLERANCE_M;
        for prism in &self.prisms {
            let n = prism.ring.len();
            for i in 0..n {
                let (a, b) = (prism.ring[i], prism.ring[(i + 1) % n]);
                if let Some((t, _)) = segment_intersection(c.xy(), p.xy(), a, b) {
                    let z = c.z + t * d.z;
                    if z >= prism.bottom && z <= prism.top && counts(t) {
                        return true;
                    }
                }
            }
            if d.z != 0.0 {
                for plane in [prism.top, prism.bottom] {
                    let t = (plane - c.z) / d.z;
                    if counts(t) && point_in_polygon((c + d * t).xy(), &prism.ring) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Marches from p toward the camera at half-cell horizontal steps and
    /// reports whether the line of sight passes below the terrain.
    pub fn blocked_by_terrain(&self, p: Vec3) -> bool {
        let d = self.camera - p;
        let horiz = d.xy().norm();
        if horiz == 0.0 {
            return false;
        }
        let dt = self.terrain_step / horiz;
        let mut t = dt;
        while t < 1.0 {
            let q = p + d * t;
            if q.z > self.terrain_top && d.z >= 0.0 {
                break;
            }
            if let Some(h) = self.scene.terrain_height_enu(q.x, q.y) {
                if q.z < h - TERRAIN_TOLERANCE_M {
                    return true;
                }
            }
            t += dt;
        }
        false
    }
}

pub fn is_occluded(scene: &Scene, p: GeoPoint) -> bool {
    OcclusionTester::new(scene).is_occluded(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Consistent,
    Inconsistent,
    Unlabeled,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Consistent => 1,
            Label::Inconsistent => -1,
            Label::Unlabeled => 0,
        }
    }

    pub fn from_i8(v: i8) -> Option<Label> {
        match v {
            1 => Some(Label::Consistent),
            -1 => Some(Label::Inconsistent),
            0 => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSample {
    pub segment_id: u32,
    pub world: GeoPoint,
    pub px: Vec2,
    /// Unit tangent of the projected road.
    pub primary_dir: Vec2,
    /// `primary_dir` turned by +90 degrees.
    pub normal_dir: Vec2,
    pub visible: bool,
    pub label: Label,
}

/// One continuous run of projected edges with no near-plane gap.
struct ImageEdge {
    a3: Vec3,
    b3: Vec3,
    a: Vec2,
    b: Vec2,
    za: f64,
    zb: f64,
}

fn clipped_edges(view: &PinholeView, pts: &[Vec3]) -> Vec<Vec<ImageEdge>> {
    let mut pieces: Vec<Vec<ImageEdge>> = Vec::new();
    let mut current: Vec<ImageEdge> = Vec::new();
    for w in pts.windows(2) {
        let (mut a3, mut b3) = (w[0], w[1]);
        let (mut za, mut zb) = (view.depth(a3), view.depth(b3));
        if za < NEAR_DEPTH_M && zb < NEAR_DEPTH_M {
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            continue;
        }
        let mut gap_after = false;
        if za < NEAR_DEPTH_M {
            a3 = a3.lerp(b3, (NEAR_DEPTH_M - za) / (zb - za));
            za = NEAR_DEPTH_M;
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
        } else if zb < NEAR_DEPTH_M {
            b3 = a3.lerp(b3, (NEAR_DEPTH_M - za) / (zb - za));
            zb = NEAR_DEPTH_M;
            gap_after = true;
        }
        let a = view.project(a3).pixel().expect("in front of camera");
        let b = view.project(b3).pixel().expect("in front of camera");
        if (b - a).norm() > 0.0 {
            current.push(ImageEdge { a3, b3, a, b, za, zb });
        }
        if gap_after && !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Samples one segment at `spacing_px` image-space arc-length intervals,
/// continuing across vertices. In-image samples only.
pub fn sample_segment(
    scene: &Scene,
    view: &PinholeView,
    occlusion: &OcclusionTester,
    segment: &RoadSegment,
    spacing_px: f64,
) -> Vec<ProjectedSample> {
    let frame = scene.frame();
    let pts: Vec<Vec3> = segment.polyline.iter().map(|p| frame.to_enu(*p)).collect();
    let mut out = Vec::new();
    for piece in clipped_edges(view, &pts) {
        let lengths: Vec<f64> = piece.iter().map(|e| (e.b - e.a).norm()).collect();
        let total: f64 = lengths.iter().sum();
        let mut positions: Vec<f64> = Vec::new();
        let mut k = 0usize;
        loop {
            let s = k as f64 * spacing_px;
            if s > total + 1e-9 {
                break;
            }
            positions.push(s.min(total));
            k += 1;
        }
        if let Some(&last) = positions.last() {
            if total - last > 1e-6 {
                positions.push(total);
            }
        }
        let mut edge = 0usize;
        let mut start = 0.0;
        for s in positions {
            while edge + 1 < piece.len() && s >= start + lengths[edge] {
                start += lengths[edge];
                edge += 1;
            }
            let e = &piece[edge];
            let f = ((s - start) / lengths[edge]).clamp(0.0, 1.0);
            // perspective-correct parameter along the 3-D edge
            let t = f * e.za / ((1.0 - f) * e.zb + f * e.za);
            let world = e.a3.lerp(e.b3, t);
            let px = e.a + (e.b - e.a) * f;
            if !view.contains(px) {
                continue;
            }
            let primary = (e.b - e.a).normalized().expect("non-degenerate edge");
            out.push(ProjectedSample {
                segment_id: segment.id,
                world: frame.to_geo(world),
                px,
                primary_dir: primary,
                normal_dir: primary.perp(),
                visible: !occlusion.is_occluded_enu(world),
                label: Label::Unlabeled,
            });
        }
    }
    out
}

/// Samples every road segment of the scene (segments in parallel, output in
/// segment order).
pub fn sample_segments(scene: &Scene, spacing_px: f64) -> Vec<ProjectedSample> {
    let view = PinholeView::of_scene(scene);
    let occlusion = OcclusionTester::new(scene);
    scene
        .roads
        .segments
        .par_iter()
        .map(|seg| sample_segment(scene, &view, &occlusion, seg, spacing_px))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Intersects the camera ray through `px` with the terrain surface by
/// marching at half-cell steps and refining the crossing by bisection.
pub fn back_project_to_terrain(scene: &Scene, view: &PinholeView, px: Vec2) -> Option<GeoPoint> {
    let frame = scene.frame();
    let ray = view.ray(px);
    let (cn, ce) = scene.cell_meters();
    let step = 0.5 * cn.min(ce);
    // height of the ray above terrain; None outside the grid
    let above = |t: f64| {
        let q = view.origin + ray * t;
        scene.terrain_height_enu(q.x, q.y).map(|h| q.z - h)
    };
    let top = scene.dem.max_height();
    let start = if ray.z < 0.0 && view.origin.z > top {
        (view.origin.z - top) / -ray.z
    } else {
        0.0
    };
    let extent = (scene.dem.rows as f64 * cn).hypot(scene.dem.cols as f64 * ce);
    let reach = view.origin.xy().norm() + extent + (view.origin.z - scene.dem.min_height()).abs();
    let end = start + 2.0 * reach;
    let mut t = start;
    let mut entered = false;
    while t <= end {
        match above(t) {
            Some(h) if h <= 0.0 => {
                if h == 0.0 || t == start {
                    let q = view.origin + ray * t;
                    return Some(frame.to_geo(Vec3::new(q.x, q.y, q.z - h)));
                }
                let (mut lo, mut hi) = (t - step, t);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    match above(mid) {
                        Some(v) if v <= 0.0 => hi = mid,
                        _ => lo = mid,
                    }
                    if hi - lo < 1e-10 {
                        break;
                    }
                }
                let q = view.origin + ray * hi;
                let h = scene.terrain_height_enu(q.x, q.y)?;
                return Some(frame.to_geo(Vec3::new(q.x, q.y, h)));
            }
            Some(_) => entered = true,
            None if entered => return None,
            None => {}
        }
        t += step;
    }
    None
}
