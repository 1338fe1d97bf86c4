//! Deterministic scene geometry from a recipe: camera, terrain, roads and
//! building prisms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::recipe::{RoadFamily, RoadPlacement, SceneRecipe, TerrainKind};
use crate::error::{Error, Result};
use crate::geom::{point_in_polygon, point_segment_distance, Vec2, Vec3};
use crate::projection::{OcclusionTester, PinholeView};
use crate::scene::{
    BuildingPrism, Camera, CellSize, DemGrid, GeoPoint, LatLon, LocalFrame, RoadNetwork, RoadSegment, Scene,
    EARTH_RADIUS_M,
};

/// Spacing of densified road vertices.
pub const ROAD_VERTEX_SPACING_M: f64 = 2.0;
/// Free ground kept between buildings and road edges.
const ROAD_CLEARANCE_M: f64 = 4.0;
/// Gap between an occluder's road-facing wall and the road edge.
const OCCLUDER_GAP_M: f64 = 3.0;
const MAX_OCCLUDER_HEIGHT_M: f64 = 150.0;

/// Analytic terrain used to fill the DEM, in image-center coordinates.
#[derive(Debug, Clone, Copy)]
struct Relief {
    kind: TerrainKind,
    height: f64,
    center: Vec2,
    axis: Vec2,
    scale: f64,
}

impl Relief {
    fn at(&self, p: Vec2) -> f64 {
        match self.kind {
            TerrainKind::Flat => 0.0,
            TerrainKind::Hill => {
                let d = p - self.center;
                self.height * (-d.dot(d) / (2.0 * self.scale * self.scale)).exp()
            }
            TerrainKind::Ridge => {
                let d = (p - self.center).cross(self.axis);
                self.height * (-d * d / (2.0 * self.scale * self.scale)).exp()
            }
        }
    }
}

/// Everything the renderer needs besides the scene itself.
#[derive(Debug, Clone)]
pub struct Layout {
    pub scene: Scene,
    pub road_width_m: f64,
    /// Densified full-length centerlines in scene ENU, one per road.
    pub centerlines: Vec<Vec<Vec3>>,
    /// Occluder building ids.
    pub occluder_ids: Vec<u32>,
}

fn rotate(v: Vec2, deg: f64) -> Vec2 {
    let (s, c) = deg.to_radians().sin_cos();
    // clockwise compass rotation applied to a north-referenced vector
    Vec2::new(v.x * c + v.y * s, -v.x * s + v.y * c)
}

fn heading_vector(deg: f64) -> Vec2 {
    rotate(Vec2::new(0.0, 1.0), deg)
}

/// Ray from the camera through pixel `(u, v)` hitting the plane `z`.
fn ground_hit(view: &PinholeView, u: f64, v: f64, z: f64) -> Option<Vec2> {
    let ray = view.ray(Vec2::new(u, v));
    if ray.z >= -1e-9 {
        return None;
    }
    let t = (z - view.origin.z) / ray.z;
    (t > 0.0).then(|| (view.origin + ray * t).xy())
}

fn centerline(family: RoadFamily, anchor: Vec2, dir: Vec2, half_len: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let n = (half_len / ROAD_VERTEX_SPACING_M).ceil() as i64;
    let normal = dir.perp();
    match family {
        RoadFamily::Straight => (-n..=n)
            .map(|k| anchor + dir * (k as f64 * ROAD_VERTEX_SPACING_M))
            .collect(),
        RoadFamily::Arc => {
            let radius = rng.random_range(250.0..600.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let center = anchor + normal * (radius * side);
            let start = anchor - center;
            (-n..=n)
                .map(|k| {
                    let a = k as f64 * ROAD_VERTEX_SPACING_M / radius * side;
                    let (s, c) = a.sin_cos();
                    center + Vec2::new(start.x * c - start.y * s, start.x * s + start.y * c)
                })
                .collect()
        }
        RoadFamily::SCurve => {
            let amp = rng.random_range(15.0..35.0);
            let wavelength = rng.random_range(250.0..400.0);
            (-n..=n)
                .map(|k| {
                    let s = k as f64 * ROAD_VERTEX_SPACING_M;
                    anchor + dir * s + normal * (amp * (std::f64::consts::TAU * s / wavelength).sin())
                })
                .collect()
        }
    }
}

fn longest_inside(pts: &[Vec2], lo: Vec2, hi: Vec2) -> Vec<Vec2> {
    let inside = |p: &Vec2| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    let mut best: &[Vec2] = &[];
    let mut start = None;
    for i in 0..=pts.len() {
        let ok = i < pts.len() && inside(&pts[i]);
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s > best.len() {
                    best = &pts[s..i];
                }
                start = None;
            }
            _ => {}
        }
    }
    best.to_vec()
}

fn polyline_distance(p: Vec2, line: &[Vec2]) -> f64 {
    line.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn rectangle(center: Vec2, along: Vec2, length: f64, depth: f64) -> Vec<Vec2> {
    let across = along.perp();
    let (a, b) = (along * (0.5 * length), across * (0.5 * depth));
    vec![center - a - b, center + a - b, center + a + b, center - a + b]
}

/// Smallest distance between a rectangle and a densified polyline.
fn rect_road_distance(rect: &[Vec2], line: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for p in line {
        if point_in_polygon(*p, rect) {
            return 0.0;
        }
        for k in 0..rect.len() {
            best = best.min(point_segment_distance(*p, rect[k], rect[(k + 1) % rect.len()]));
        }
    }
    best
}

pub fn build(recipe: &SceneRecipe) -> Result<Layout> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let pitch = recipe.oblique_deg.unwrap_or_else(|| rng.random_range(30.0..=45.0));
    let heading = recipe.heading_deg.unwrap_or_else(|| rng.random_range(0.0..360.0));
    let [w, h] = recipe.image_size;
    let focal = 1.1 * w as f64;
    let slant = focal * recipe.gsd_m;

    // image-center coordinates: ground point under the principal ray at (0, 0)
    let relief_height = match recipe.terrain {
        TerrainKind::Flat => 0.0,
        _ => recipe.relief_m,
    };
    let mut camera = Camera {
        position: GeoPoint::new(0.0, 0.0, 0.0),
        yaw_deg: heading,
        pitch_deg: pitch,
        roll_deg: 0.0,
        focal_px: focal,
        principal: [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0],
        image_size: [w, h],
    };
    let [_, _, fwd] = camera.axes();
    // provisional camera with the ground plane at z = 0 to size the footprint
    let cam_center = Vec3::new(0.0, 0.0, 0.0) - fwd * slant;
    let provisional = {
        let mut v = PinholeView::new(&camera, &LocalFrame::new(0.0, 0.0));
        v.origin = cam_center;
        v
    };
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (wf, hf) = (w as f64 - 1.0, h as f64 - 1.0);
    for (u, v) in [
        (0.0, 0.0),
        (wf, 0.0),
        (0.0, hf),
        (wf, hf),
        (wf / 2.0, 0.0),
        (wf / 2.0, hf),
        (0.0, hf / 2.0),
        (wf, hf / 2.0),
    ] {
        let p = ground_hit(&provisional, u, v, 0.0).ok_or_else(|| {
            Error::DegenerateCamera("image corner rays do not reach the ground".into())
        })?;
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = 60.0 + 2.0 * relief_height;
    lo = lo - Vec2::new(pad, pad);
    hi = hi + Vec2::new(pad, pad);
    let extent = (hi - lo).x.max((hi - lo).y);
    let cell_m = (extent / 200.0).max(2.0);
    let cols = ((hi.x - lo.x) / cell_m).ceil() as usize + 1;
    let rows = ((hi.y - lo.y) / cell_m).ceil() as usize + 1;

    let relief = Relief {
        kind: recipe.terrain,
        height: relief_height,
        center: Vec2::new(
            rng.random_range(-0.25..0.25) * (hi.x - lo.x),
            rng.random_range(-0.25..0.25) * (hi.y - lo.y),
        ),
        axis: heading_vector(rng.random_range(0.0..180.0)),
        scale: extent * rng.random_range(0.15..0.3),
    };

    // geodetic frame anchored at the DEM's south-west corner
    let m_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let lat0 = recipe.anchor[0] + lo.y / m_lat;
    let m_lon = m_lat * lat0.to_radians().cos();
    let lon0 = recipe.anchor[1] + lo.x / m_lon;
    let frame = LocalFrame::new(lat0, lon0);
    let mut heights = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            heights.push(relief.at(lo + Vec2::new(c as f64 * cell_m, r as f64 * cell_m)));
        }
    }
    let dem = DemGrid {
        origin: LatLon { lat: lat0, lon: lon0 },
        cell_size: CellSize {
            lat: cell_m / m_lat,
            lon: cell_m / m_lon,
        },
        rows,
        cols,
        heights,
    };
    // scene ENU = image-center coordinates shifted by -lo
    let to_scene = |p: Vec2| p - lo;
    let center_ground = relief.at(Vec2::default());
    let cam_pos = Vec3::new(-lo.x, -lo.y, center_ground) - fwd * slant;
    camera.position = frame.to_geo(cam_pos);
    let mut scene = Scene {
        dem,
        roads: RoadNetwork::default(),
        buildings: Vec::new(),
        camera,
    };
    let view = PinholeView::of_scene(&scene);
    let dem_lo = Vec2::new(5.0, 5.0);
    let dem_hi = Vec2::new((cols - 1) as f64 * cell_m - 5.0, (rows - 1) as f64 * cell_m - 5.0);
    let half_len = (hi - lo).norm();
    let width = recipe.roads.width_m;

    // roads
    let placements: Vec<RoadPlacement> = if recipe.roads.layout.is_empty() {
        Vec::new()
    } else {
        recipe.roads.layout.clone()
    };
    let mut lines: Vec<Vec<Vec2>> = Vec::new();
    if !placements.is_empty() {
        for p in &placements {
            let anchor = to_scene(Vec2::new(p.east_m, p.north_m));
            let pts = centerline(p.family, anchor, heading_vector(p.heading_deg), half_len, &mut rng);
            let pts = longest_inside(&pts, dem_lo, dem_hi);
            if pts.len() >= 2 {
                lines.push(pts);
            }
        }
    } else {
        let mut attempts = 0;
        while lines.len() < recipe.roads.count && attempts < 200 {
            attempts += 1;
            let u = rng.random_range(0.2..0.8) * wf;
            let v = rng.random_range(0.25..0.75) * hf;
            let dir = heading_vector(rng.random_range(0.0..180.0));
            let Some(anchor) = ground_hit(&view, u, v, center_ground) else {
                continue;
            };
            let pts = centerline(recipe.roads.family, anchor, dir, half_len, &mut rng);
            let pts = longest_inside(&pts, dem_lo, dem_hi);
            if pts.len() < 2 {
                continue;
            }
            // reject roads running alongside an existing one
            let near = pts
                .iter()
                .step_by(10)
                .filter(|p| lines.iter().any(|l| polyline_distance(**p, l) < 3.0 * width))
                .count();
            if near * 5 > pts.len() / 10 {
                continue;
            }
            lines.push(pts);
        }
    }
    let drape = |p: Vec2| -> Vec3 {
        let g = frame.to_geo(Vec3::new(p.x, p.y, 0.0));
        let z = scene_height(&scene.dem, g.lat, g.lon);
        Vec3::new(p.x, p.y, z)
    };
    let per_segment = ((recipe.roads.segment_length_m / ROAD_VERTEX_SPACING_M).round() as usize).max(1);
    let mut next_id = 1u32;
    let mut centerlines = Vec::new();
    for line in &lines {
        let pts3: Vec<Vec3> = line.iter().map(|p| drape(*p)).collect();
        let mut start = 0;
        while start + 1 < pts3.len() {
            let end = (start + per_segment).min(pts3.len() - 1);
            // fold a short tail into the previous piece
            let end = if pts3.len() - 1 - end < per_segment / 3 { pts3.len() - 1 } else { end };
            scene.roads.segments.push(RoadSegment {
                id: next_id,
                polyline: pts3[start..=end].iter().map(|p| frame.to_geo(*p)).collect(),
                source: None,
            });
            next_id += 1;
            start = end;
        }
        centerlines.push(pts3);
    }

    // ordinary buildings
    let b = &recipe.buildings;
    let mut rects: Vec<(Vec<Vec2>, Vec2, f64)> = Vec::new();
    let mut attempts = 0;
    let mut building_id = 1u32;
    while rects.len() < b.count && attempts < 50 * (b.count + 1) {
        attempts += 1;
        let u = rng.random_range(0.05..0.95) * wf;
        let v = rng.random_range(0.05..0.95) * hf;
        let len = rng.random_range(b.min_size_m..=b.max_size_m);
        let dep = rng.random_range(b.min_size_m..=b.max_size_m);
        let along = heading_vector(rng.random_range(0.0..180.0));
        let height = rng.random_range(b.min_height_m..=b.max_height_m);
        let Some(c) = ground_hit(&view, u, v, center_ground) else {
            continue;
        };
        let rect = rectangle(c, along, len, dep);
        if let Some(prism) = try_place(&scene, &frame, &lines, &rects, rect, c, width, ROAD_CLEARANCE_M, height, building_id, dem_lo, dem_hi) {
            rects.push((prism.1, c, 0.5 * len.hypot(dep)));
            scene.buildings.push(prism.0);
            building_id += 1;
        }
    }

    // occluders beside a road on the camera side
    let cam_xy = cam_pos.xy();
    let mut occluder_ids = Vec::new();
    let mut attempts = 0;
    while occluder_ids.len() < b.occluders && attempts < 100 * (b.occluders + 1) && !lines.is_empty() {
        attempts += 1;
        let li = rng.random_range(0..lines.len());
        let line = &lines[li];
        if line.len() < 40 {
            continue;
        }
        let margin = 0.12 * wf.min(hf);
        let framed: Vec<usize> = (15..line.len() - 15)
            .filter(|&k| {
                view.project(drape(line[k]))
                    .pixel()
                    .is_some_and(|px| px.x >= margin && px.x <= wf - margin && px.y >= margin && px.y <= hf - margin)
            })
            .collect();
        if framed.is_empty() {
            continue;
        }
        let k = framed[rng.random_range(0..framed.len())];
        let p = line[k];
        let Some(t) = (line[k + 1] - line[k - 1]).normalized() else { continue };
        let mut n = t.perp();
        if n.dot(cam_xy - p) < 0.0 {
            n = -n;
        }
        let len = rng.random_range(40.0..60.0);
        let dep = rng.random_range(12.0..20.0);
        // sides parallel to the road and to the viewing azimuth, so the
        // building hides the road over its full length
        let Some(toward) = (cam_xy - p).normalized() else { continue };
        let facing = toward.dot(n);
        if facing < 0.3 {
            continue;
        }
        let near = p + toward * ((0.5 * width + OCCLUDER_GAP_M) / facing);
        let reach = toward * (dep / facing);
        let (a, b) = (near - t * (0.5 * len), near + t * (0.5 * len));
        let rect = vec![a, b, b + reach, a + reach];
        let c = near + reach * 0.5;
        let mut height = 20.0;
        let mut placed = None;
        while height <= MAX_OCCLUDER_HEIGHT_M {
            let Some(prism) =
                try_place(&scene, &frame, &lines, &rects, rect.clone(), c, width, OCCLUDER_GAP_M - 0.5, height, building_id, dem_lo, dem_hi)
            else {
                break;
            };
            // the road points facing the middle of the wall must be hidden
            let probe = Scene {
                buildings: vec![prism.0.clone()],
                ..scene.clone()
            };
            let tester = OcclusionTester::new(&probe);
            let span = (0.3 * len / ROAD_VERTEX_SPACING_M) as usize;
            let hidden = line[k.saturating_sub(span)..(k + span).min(line.len() - 1)]
                .iter()
                .flat_map(|q| [*q + t.perp() * (0.45 * width), *q, *q - t.perp() * (0.45 * width)])
                .all(|q| tester.is_occluded_enu(drape(q)));
            if hidden {
                placed = Some(prism);
                break;
            }
            height *= 1.25;
        }
        if let Some(prism) = placed {
            rects.push((prism.1, c, 0.5 * len.hypot(dep)));
            occluder_ids.push(prism.0.id);
            scene.buildings.push(prism.0);
            building_id += 1;
        }
    }

    scene.validate()?;
    Ok(Layout {
        scene,
        road_width_m: width,
        centerlines,
        occluder_ids,
    })
}

fn scene_height(dem: &DemGrid, lat: f64, lon: f64) -> f64 {
    let lat = lat.clamp(dem.origin.lat, dem.max_lat());
    let lon = lon.clamp(dem.origin.lon, dem.max_lon());
    dem.height_at(lat, lon).unwrap_or(0.0)
}

#[allow(clippy::too_many_arguments)]
fn try_place(
    scene: &Scene,
    frame: &LocalFrame,
    lines: &[Vec<Vec2>],
    rects: &[(Vec<Vec2>, Vec2, f64)],
    rect: Vec<Vec2>,
    center: Vec2,
    road_width: f64,
    clearance: f64,
    height: f64,
    id: u32,
    lo: Vec2,
    hi: Vec2,
) -> Option<(BuildingPrism, Vec<Vec2>)> {
    if rect.iter().any(|p| p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y) {
        return None;
    }
    if lines
        .iter()
        .any(|l| rect_road_distance(&rect, l) < 0.5 * road_width + clearance)
    {
        return None;
    }
    let radius = rect.iter().map(|p| (*p - center).norm()).fold(0.0, f64::max);
    if rects.iter().any(|(_, c, r)| (*c - center).norm() < r + radius + 3.0) {
        return None;
    }
    let base = rect
        .iter()
        .chain(std::iter::once(&center))
        .map(|p| {
            let g = frame.to_geo(Vec3::new(p.x, p.y, 0.0));
            scene_height(&scene.dem, g.lat, g.lon)
        })
        .fold(f64::INFINITY, f64::min);
    let footprint = rect
        .iter()
        .map(|p| {
            let g = frame.to_geo(Vec3::new(p.x, p.y, 0.0));
            LatLon { lat: g.lat, lon: g.lon }
        })
        .collect();
    Some((
        BuildingPrism {
            id,
            footprint,
            base_alt: base,
            height,
        },
        rect,
    ))
}
