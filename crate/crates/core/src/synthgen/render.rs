//! Depth-buffered triangle rasterizer for synthetic scenes.
//!
//! Terrain cells become two triangles each, buildings contribute wall quads
//! and a roof fan (footprints are assumed convex). Shading reconstructs the
//! world point of every pixel from its depth and applies procedural ground,
//! road, facade and roof textures, then seeded Gaussian pixel noise.

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::recipe::TextureRecipe;
use crate::geom::{point_segment_distance, Vec2, Vec3};
use crate::projection::{PinholeView, NEAR_DEPTH_M};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PixelClass {
    Sky = 0,
    Terrain = 1,
    Road = 2,
    Facade = 3,
    Roof = 4,
}

impl PixelClass {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => PixelClass::Sky,
            1 => PixelClass::Terrain,
            2 => PixelClass::Road,
            3 => PixelClass::Facade,
            4 => PixelClass::Roof,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Terrain,
    Wall { building: usize, corner: Vec2, along: Vec2, normal: Vec2, base: f64 },
    Roof { building: usize },
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    /// Screen coordinates and camera depth of each corner.
    s: [Vec3; 3],
    surface: u32,
}

/// Triangle soup of a scene projected into its camera.
pub struct Geometry {
    view: PinholeView,
    tris: Vec<Tri>,
    surfaces: Vec<Surface>,
}

impl Geometry {
    pub fn new(scene: &Scene) -> Self {
        let view = PinholeView::of_scene(scene);
        let frame = scene.frame();
        let mut g = Geometry {
            view,
            tris: Vec::new(),
            surfaces: vec![Surface::Terrain],
        };
        let dem = &scene.dem;
        let node = |r: usize, c: usize| {
            let ll = dem.node(r, c);
            frame.to_enu(crate::scene::GeoPoint::new(ll.lat, ll.lon, dem.height(r, c)))
        };
        let mut prev_row: Vec<Vec3> = (0..dem.cols).map(|c| node(0, c)).collect();
        for r in 1..dem.rows {
            let row: Vec<Vec3> = (0..dem.cols).map(|c| node(r, c)).collect();
            for c in 0..dem.cols - 1 {
                let (a, b, cc, d) = (prev_row[c], prev_row[c + 1], row[c + 1], row[c]);
                g.push(a, b, cc, 0);
                g.push(a, cc, d, 0);
            }
            prev_row = row;
        }
        for (bi, b) in scene.buildings.iter().enumerate() {
            let ring: Vec<Vec2> = b
                .footprint
                .iter()
                .map(|p| frame.to_enu(crate::scene::GeoPoint::new(p.lat, p.lon, 0.0)).xy())
                .collect();
            let (z0, z1) = (b.base_alt, b.top_alt());
            // outward normals need the ring orientation
            let area: f64 = (0..ring.len()).map(|k| ring[k].cross(ring[(k + 1) % ring.len()])).sum();
            for k in 0..ring.len() {
                let (p, q) = (ring[k], ring[(k + 1) % ring.len()]);
                let Some(along) = (q - p).normalized() else { continue };
                let normal = if area > 0.0 { Vec2::new(along.y, -along.x) } else { along.perp() };
                let id = g.surfaces.len() as u32;
                g.surfaces.push(Surface::Wall { building: bi, corner: p, along, normal, base: z0 });
                let (a, bb) = (Vec3::new(p.x, p.y, z0), Vec3::new(q.x, q.y, z0));
                let (c, d) = (Vec3::new(q.x, q.y, z1), Vec3::new(p.x, p.y, z1));
                g.push(a, bb, c, id);
                g.push(a, c, d, id);
            }
            let id = g.surfaces.len() as u32;
            g.surfaces.push(Surface::Roof { building: bi });
            for k in 1..ring.len().saturating_sub(1) {
                let v = |p: Vec2| Vec3::new(p.x, p.y, z1);
                g.push(v(ring[0]), v(ring[k]), v(ring[k + 1]), id);
            }
        }
        g
    }

    fn push(&mut self, a: Vec3, b: Vec3, c: Vec3, surface: u32) {
        let mut s = [Vec3::default(); 3];
        for (slot, p) in s.iter_mut().zip([a, b, c]) {
            let cc = self.view.camera_coords(p);
            if cc.z < NEAR_DEPTH_M {
                return;
            }
            *slot = Vec3::new(
                self.view.cx + self.view.focal * cc.x / cc.z,
                self.view.cy + self.view.focal * cc.y / cc.z,
                cc.z,
            );
        }
        let area = (s[1].xy() - s[0].xy()).cross(s[2].xy() - s[0].xy());
        if area.abs() < 1e-12 {
            return;
        }
        self.tris.push(Tri { s, surface });
    }

    /// Perspective-correct depth of `tri` at screen point `p`, if covered.
    #[inline]
    fn cover(tri: &Tri, p: Vec2) -> Option<f64> {
        let [a, b, c] = tri.s;
        let area = (b.xy() - a.xy()).cross(c.xy() - a.xy());
        let w0 = (c.xy() - b.xy()).cross(p - b.xy()) / area;
        let w1 = (a.xy() - c.xy()).cross(p - c.xy()) / area;
        let w2 = 1.0 - w0 - w1;
        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
            return None;
        }
        Some(1.0 / (w0 / a.z + w1 / b.z + w2 / c.z))
    }

    /// Nearest surface along the ray through an arbitrary image point.
    pub fn probe(&self, p: Vec2) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        for t in &self.tris {
            let (lo, hi) = bbox(t);
            if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
                continue;
            }
            if let Some(z) = Self::cover(t, p) {
                if best.is_none_or(|(bz, _)| z < bz) {
                    best = Some((z, t.surface));
                }
            }
        }
        best
    }

    /// Depth and surface index per pixel; `u32::MAX` marks sky.
    fn rasterize(&self) -> (Vec<f64>, Vec<u32>) {
        let (w, h) = (self.view.width as usize, self.view.height as usize);
        let mut depth = vec![f64::INFINITY; w * h];
        let mut surf = vec![u32::MAX; w * h];
        for t in &self.tris {
            let (lo, hi) = bbox(t);
            let x0 = lo.x.ceil().max(0.0) as i64;
            let y0 = lo.y.ceil().max(0.0) as i64;
            let x1 = hi.x.floor().min(w as f64 - 1.0) as i64;
            let y1 = hi.y.floor().min(h as f64 - 1.0) as i64;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if let Some(z) = Self::cover(t, Vec2::new(x as f64, y as f64)) {
                        let i = y as usize * w + x as usize;
                        if z < depth[i] {
                            depth[i] = z;
                            surf[i] = t.surface;
                        }
                    }
                }
            }
        }
        (depth, surf)
    }
}

fn bbox(t: &Tri) -> (Vec2, Vec2) {
    let xs = [t.s[0].x, t.s[1].x, t.s[2].x];
    let ys = [t.s[0].y, t.s[1].y, t.s[2].y];
    (
        Vec2::new(xs.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::INFINITY, f64::min)),
        Vec2::new(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
    )
}

/// Uniform grid over road centerline pieces for distance queries.
pub struct RoadIndex {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
    pieces: Vec<(Vec2, Vec2)>,
    reach: f64,
}

impl RoadIndex {
    /// Indexes pieces of `lines` for queries up to `reach` meters away.
    pub fn new(lines: &[Vec<Vec2>], extent: Vec2, reach: f64) -> Self {
        let cell = 16.0f64.max(reach);
        let cols = (extent.x / cell).ceil().max(1.0) as usize + 1;
        let rows = (extent.y / cell).ceil().max(1.0) as usize + 1;
        let mut idx = RoadIndex {
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
            pieces: Vec::new(),
            reach,
        };
        for line in lines {
            for w in line.windows(2) {
                let id = idx.pieces.len() as u32;
                idx.pieces.push((w[0], w[1]));
                let lo = Vec2::new(w[0].x.min(w[1].x) - reach, w[0].y.min(w[1].y) - reach);
                let hi = Vec2::new(w[0].x.max(w[1].x) + reach, w[0].y.max(w[1].y) + reach);
                let (c0, r0) = idx.cell_of(lo);
                let (c1, r1) = idx.cell_of(hi);
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        idx.buckets[r * cols + c].push(id);
                    }
                }
            }
        }
        idx
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let c = (p.x / self.cell).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = (p.y / self.cell).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (c, r)
    }

    /// Distance to the nearest indexed piece, capped at the index reach.
    pub fn distance(&self, p: Vec2) -> f64 {
        let (c, r) = self.cell_of(p);
        self.buckets[r * self.cols + c]
            .iter()
            .map(|&i| {
                let (a, b) = self.pieces[i as usize];
                point_segment_distance(p, a, b)
            })
            .fold(self.reach, f64::min)
    }
}

fn hash2(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in [0, 1].
fn value_noise(p: Vec2, seed: u64) -> f64 {
    let (x0, y0) = (p.x.floor(), p.y.floor());
    let (fx, fy) = (p.x - x0, p.y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn fbm(p: Vec2, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 0.5;
    let mut q = p;
    for octave in 0..3 {
        sum += amp * value_noise(q, seed.wrapping_add(octave));
        amp *= 0.5;
        q = q * 2.03;
    }
    sum / 0.875
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    a.map(|v| v * s)
}

const SKY: [f64; 3] = [0.72, 0.82, 0.95];
const WINDOW: [f64; 3] = [0.14, 0.17, 0.22];

/// Rendered image with its per-pixel surface classes.
#[derive(Debug, Clone)]
pub struct Raster {
    pub image: RgbImage,
    pub classes: Vec<u8>,
    /// Camera depth per pixel; infinite for sky.
    pub depth: Vec<f64>,
}

impl Raster {
    pub fn class_at(&self, x: u32, y: u32) -> PixelClass {
        let i = y as usize * self.image.width() as usize + x as usize;
        PixelClass::from_u8(self.classes[i]).expect("valid class byte")
    }
}

pub struct Shader<'a> {
    scene: &'a Scene,
    geometry: &'a Geometry,
    roads: RoadIndex,
    half_width: f64,
    texture: TextureRecipe,
    seed: u64,
    sun: Vec3,
}

impl<'a> Shader<'a> {
    pub fn new(scene: &'a Scene, geometry: &'a Geometry, centerlines: &[Vec<Vec2>], road_width: f64, texture: TextureRecipe, seed: u64) -> Self {
        let (cn, ce) = scene.cell_meters();
        let extent = Vec2::new((scene.dem.cols - 1) as f64 * ce, (scene.dem.rows - 1) as f64 * cn);
        Self {
            scene,
            geometry,
            roads: RoadIndex::new(centerlines, extent, 0.5 * road_width + 2.0),
            half_width: 0.5 * road_width,
            texture,
            seed,
            sun: Vec3::new(0.35, 0.45, 0.82).normalized(),
        }
    }

    fn terrain_normal(&self, p: Vec3) -> Vec3 {
        let d = 1.0;
        let h = |x: f64, y: f64| self.scene.terrain_height_enu(x, y).unwrap_or(p.z);
        let dx = (h(p.x + d, p.y) - h(p.x - d, p.y)) / (2.0 * d);
        let dy = (h(p.x, p.y + d) - h(p.x, p.y - d)) / (2.0 * d);
        Vec3::new(-dx, -dy, 1.0).normalized()
    }

    fn ground_color(&self, p: Vec2) -> [f64; 3] {
        let t = &self.texture;
        let field = fbm(p * (1.0 / 45.0), self.seed ^ 0x11);
        let detail = fbm(p * (1.0 / 3.0), self.seed ^ 0x22);
        let green = [0.82, 1.08, 0.62];
        let brown = [1.12, 0.96, 0.74];
        let hue = mix(green, brown, field);
        let mut c = scale(hue, t.background_albedo * (1.0 + t.clutter * 0.6 * (detail - 0.5)));
        let blobs = fbm(p * (1.0 / 7.0), self.seed ^ 0x33);
        let threshold = 0.72 - 0.12 * t.clutter;
        if t.clutter > 0.0 && blobs > threshold {
            let k = ((blobs - threshold) / 0.05).min(1.0);
            c = mix(c, [0.1, 0.16, 0.08], k * t.clutter);
        }
        c
    }

    fn road_color(&self, p: Vec2) -> [f64; 3] {
        let grain = value_noise(p * 1.3, self.seed ^ 0x44) - 0.5;
        scale([0.97, 0.97, 1.0], self.texture.road_albedo * (1.0 + 0.06 * grain))
    }

    fn building_tone(&self, building: usize, salt: u64) -> f64 {
        hash2(building as i64, salt as i64, self.seed)
    }

    /// Noise-free color and class of one pixel.
    fn shade(&self, x: usize, y: usize, depth: f64, surface: u32) -> ([f64; 3], PixelClass) {
        if surface == u32::MAX {
            return (SKY, PixelClass::Sky);
        }
        let view = &self.geometry.view;
        let px = Vec2::new(x as f64, y as f64);
        let p = view.back_project_at_depth(px, depth);
        match self.geometry.surfaces[surface as usize] {
            Surface::Terrain => {
                let n = self.terrain_normal(p);
                let light = (n.dot(self.sun) / self.sun.z).clamp(0.3, 1.3);
                let d = self.roads.distance(p.xy());
                // blend across roughly one ground sample at the road edge
                let t = ((self.half_width - d) / 0.45 + 0.5).clamp(0.0, 1.0);
                let ground = self.ground_color(p.xy());
                let c = if t > 0.0 { mix(ground, self.road_color(p.xy()), t) } else { ground };
                let class = if d <= self.half_width { PixelClass::Road } else { PixelClass::Terrain };
                (scale(c, light), class)
            }
            Surface::Wall { building, corner, along, normal, base } => {
                let s = (p.xy() - corner).dot(along);
                let z = p.z - base;
                let floor = z.rem_euclid(3.5);
                let bay = s.rem_euclid(3.0);
                let tone = 0.55 + 0.3 * self.building_tone(building, 1);
                let tint = [1.0, 0.97 + 0.06 * self.building_tone(building, 2), 0.92];
                let light = 0.6 + 0.4 * normal.dot(self.sun.xy().normalized().unwrap_or_default()).max(0.0);
                let c = if (1.0..2.4).contains(&floor) && (0.8..2.2).contains(&bay) && z > 0.5 {
                    WINDOW
                } else {
                    scale(tint, tone)
                };
                (scale(c, light), PixelClass::Facade)
            }
            Surface::Roof { building } => {
                let tone = 0.3 + 0.2 * self.building_tone(building, 3);
                let grain = value_noise(p.xy() * 0.8, self.seed ^ 0x55) - 0.5;
                (scale([1.0, 0.9, 0.85], tone * (1.0 + 0.1 * grain)), PixelClass::Roof)
            }
        }
    }

    pub fn render(&self) -> Raster {
        let (depth, surf) = self.geometry.rasterize();
        let (w, h) = (self.geometry.view.width as usize, self.geometry.view.height as usize);
        let mut buf = vec![0u8; w * h * 3];
        let mut classes = vec![0u8; w * h];
        let sigma = self.texture.noise_sigma;
        buf.par_chunks_mut(w * 3)
            .zip(classes.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row, cls))| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e_6f69_7365);
                rng.set_stream(y as u64);
                for x in 0..w {
                    let i = y * w + x;
                    let (c, class) = self.shade(x, y, depth[i], surf[i]);
                    cls[x] = class as u8;
                    for ch in 0..3 {
                        let noise: f64 = if sigma > 0.0 {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            sigma * z
                        } else {
                            0.0
                        };
                        row[3 * x + ch] = (c[ch] * 255.0 + noise).round().clamp(0.0, 255.0) as u8;
                    }
                }
            });
        Raster {
            image: RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches size"),
            classes,
            depth,
        }
    }

    /// Class of the surface seen through an arbitrary image point.
    pub fn class_at_point(&self, px: Vec2) -> PixelClass {
        match self.geometry.probe(px) {
            None => PixelClass::Sky,
            Some((depth, surface)) => match self.geometry.surfaces[surface as usize] {
                Surface::Terrain => {
                    let p = self.geometry.view.back_project_at_depth(px, depth);
                    if self.roads.distance(p.xy()) <= self.half_width {
                        PixelClass::Road
                    } else {
                        PixelClass::Terrain
                    }
                }
                Surface::Wall { .. } => PixelClass::Facade,
                Surface::Roof { .. } => PixelClass::Roof,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_bounded_and_smooth() {
        for k in 0..200 {
            let p = Vec2::new(k as f64 * 0.37, k as f64 * 0.11);
            let v = value_noise(p, 7);
            assert!((0.0..=1.0).contains(&v));
            let f = fbm(p, 7);
            assert!((0.0..=1.0).contains(&f));
        }
        let a = value_noise(Vec2::new(3.0, 4.0), 1);
        let b = value_noise(Vec2::new(3.0 + 1e-9, 4.0), 1);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn road_index_matches_brute_force() {
        let line = vec![Vec2::new(10.0, 10.0), Vec2::new(50.0, 12.0), Vec2::new(90.0, 40.0)];
        let idx = RoadIndex::new(std::slice::from_ref(&line), Vec2::new(100.0, 100.0), 6.0);
        for k in 0..100 {
            let p = Vec2::new((k * 37 % 100) as f64, (k * 53 % 100) as f64);
            let brute = crate::geom::point_polyline_distance(p, &line).min(6.0);
            assert!((idx.distance(p) - brute).abs() < 1e-12);
        }
    }
}
