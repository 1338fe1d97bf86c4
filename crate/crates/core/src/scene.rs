//! World model: terrain grid, road vectors, building prisms and the camera
//! that took the image. Everything downstream reads a [`Scene`] immutably.
//!
//! Geodetic coordinates are mapped to a local East-North-Up tangent plane
//! anchored at the DEM origin (south-west corner, altitude 0), using a
//! spherical earth. Scenes are city-sized so the flat-plane error is far
//! below a pixel.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segment_intersection, Vec2, Vec3};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const SCENE_FORMAT: &str = "obval-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64, alt: f64) -> Self {
        Self { lat, lon, alt }
    }

    /// Checks coordinate ranges, naming `field` in the error.
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::validation(format!("{field}.lat"), "outside [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::validation(format!("{field}.lon"), "outside [-180, 180]"));
        }
        if !self.alt.is_finite() {
            return Err(Error::validation(format!("{field}.alt"), "not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Degrees per grid cell along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSize {
    pub lat: f64,
    pub lon: f64,
}

/// Row-major height grid. Row `r` lies at `origin.lat + r * cell_size.lat`,
/// column `c` at `origin.lon + c * cell_size.lon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemGrid {
    pub origin: LatLon,
    pub cell_size: CellSize,
    pub rows: usize,
    pub cols: usize,
    pub heights: Vec<f64>,
}

impl DemGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::validation("dem.rows/cols", "grid must be at least 2x2"));
        }
        if !(self.cell_size.lat > 0.0 && self.cell_size.lon > 0.0) {
            return Err(Error::validation("dem.cell_size", "must be positive"));
        }
        if self.heights.len() != self.rows * self.cols {
            return Err(Error::validation(
                "heights",
                format!("expected {} values, found {}", self.rows * self.cols, self.heights.len()),
            ));
        }
        if let Some(i) = self.heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::validation("heights", format!("value {i} is not finite")));
        }
        let origin = GeoPoint::new(self.origin.lat, self.origin.lon, 0.0);
        origin.validate("dem.origin")?;
        GeoPoint::new(self.max_lat(), self.max_lon(), 0.0).validate("dem.extent")
    }

    pub fn height(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.cols + col]
    }

    pub fn node(&self, row: usize, col: usize) -> LatLon {
        LatLon {
            lat: self.origin.lat + row as f64 * self.cell_size.lat,
            lon: self.origin.lon + col as f64 * self.cell_size.lon,
        }
    }

    pub fn max_lat(&self) -> f64 {
        self.origin.lat + (self.rows - 1) as f64 * self.cell_size.lat
    }

    pub fn max_lon(&self) -> f64 {
        self.origin.lon + (self.cols - 1) as f64 * self.cell_size.lon
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation of the four nodes surrounding (lat, lon).
    pub fn height_at(&self, lat: f64, lon: f64) -> Result<f64> {
        let fr = grid_coord(lat, self.origin.lat, self.cell_size.lat, self.rows)
            .ok_or(Error::OutOfBounds { lat, lon })?;
        let fc = grid_coord(lon, self.origin.lon, self.cell_size.lon, self.cols)
            .ok_or(Error::OutOfBounds { lat, lon })?;
        Ok(self.bilinear(fr, fc))
    }

    fn bilinear(&self, fr: f64, fc: f64) -> f64 {
        let r = (fr.floor() as usize).min(self.rows - 2);
        let c = (fc.floor() as usize).min(self.cols - 2);
        let t = fr - r as f64;
        let s = fc - c as f64;
        let h00 = self.height(r, c);
        let h01 = self.height(r, c + 1);
        let h10 = self.height(r + 1, c);
        let h11 = self.height(r + 1, c + 1);
        (1.0 - t) * ((1.0 - s) * h00 + s * h01) + t * ((1.0 - s) * h10 + s * h11)
    }
}

/// Fractional grid index of `x`, snapped to the nearest node when within
/// 1e-9 cells of it so that node queries return stored heights exactly.
fn grid_coord(x: f64, origin: f64, step: f64, n: usize) -> Option<f64> {
    if !x.is_finite() {
        return None;
    }
    let mut f = (x - origin) / step;
    let nearest = f.round();
    if (f - nearest).abs() < 1e-9 {
        f = nearest;
    }
    (0.0..=(n - 1) as f64).contains(&f).then_some(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: u32,
    pub polyline: Vec<GeoPoint>,
    /// Provenance tag; `Some("conflation")` for corrected vectors.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadNetwork {
    pub segments: Vec<RoadSegment>,
}

impl RoadNetwork {
    pub fn get(&self, id: u32) -> Option<&RoadSegment> {
        self.segments.iter().find(|s| s.id == id)
    }
}

/// Vertical-walled, flat-roofed extrusion of a footprint polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingPrism {
    pub id: u32,
    pub footprint: Vec<LatLon>,
    pub base_alt: f64,
    pub height: f64,
}

impl BuildingPrism {
    pub fn top_alt(&self) -> f64 {
        self.base_alt + self.height
    }

    fn validate(&self, field: &str) -> Result<()> {
        if self.footprint.len() < 3 {
            return Err(Error::validation(
                format!("{field}.footprint"),
                "needs at least 3 vertices",
            ));
        }
        for (i, v) in self.footprint.iter().enumerate() {
            GeoPoint::new(v.lat, v.lon, 0.0).validate(&format!("{field}.footprint[{i}]"))?;
        }
        if !self.base_alt.is_finite() {
            return Err(Error::validation(format!("{field}.base_alt"), "not finite"));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::validation(format!("{field}.height"), "must be positive"));
        }
        let ring: Vec<Vec2> = self.footprint.iter().map(|p| Vec2::new(p.lon, p.lat)).collect();
        if !is_simple_polygon(&ring) {
            return Err(Error::validation(
                format!("{field}.footprint"),
                "polygon self-intersects",
            ));
        }
        Ok(())
    }
}

fn is_simple_polygon(ring: &[Vec2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a0, a1) = (ring[i], ring[(i + 1) % n]);
        if a0 == a1 {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b0, b1) = (ring[j], ring[(j + 1) % n]);
            if segment_intersection(a0, a1, b0, b1).is_some() {
                return false;
            }
        }
    }
    true
}

/// Pinhole camera. `pitch_deg` is the oblique angle between the optical axis
/// and the vertical; `yaw_deg` the compass heading of the view (clockwise
/// from north); `roll_deg` a rotation about the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: GeoPoint,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub focal_px: f64,
    pub principal: [f64; 2],
    pub image_size: [u32; 2],
}

impl Camera {
    pub fn width(&self) -> u32 {
        self.image_size[0]
    }

    pub fn height(&self) -> u32 {
        self.image_size[1]
    }

    /// Camera axes expressed in ENU: image right, image down, optical axis.
    pub fn axes(&self) -> [Vec3; 3] {
        let t = self.pitch_deg.to_radians();
        let h = self.yaw_deg.to_radians();
        let r = self.roll_deg.to_radians();
        // heading north: right = east, forward tilted from nadir toward north
        let right0 = Vec3::new(1.0, 0.0, 0.0);
        let down0 = Vec3::new(0.0, -t.cos(), -t.sin());
        let fwd0 = Vec3::new(0.0, t.sin(), -t.cos());
        let yaw = |v: Vec3| {
            Vec3::new(
                v.x * h.cos() + v.y * h.sin(),
                -v.x * h.sin() + v.y * h.cos(),
                v.z,
            )
        };
        let (right0, down0, fwd) = (yaw(right0), yaw(down0), yaw(fwd0));
        // positive roll turns image content by +roll in atan2(v, u)
        let right = right0 * r.cos() - down0 * r.sin();
        let down = down0 * r.cos() + right0 * r.sin();
        [right, down, fwd]
    }

    fn validate(&self) -> Result<()> {
        self.position.validate("camera.position")?;
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::validation("camera.focal_px", "must be positive"));
        }
        if !(self.pitch_deg > 0.0 && self.pitch_deg < 90.0) {
            return Err(Error::validation(
                "camera.pitch_deg",
                "oblique angle must lie in (0, 90) degrees",
            ));
        }
        if !(self.yaw_deg.is_finite() && self.roll_deg.is_finite()) {
            return Err(Error::validation("camera.yaw_deg/roll_deg", "not finite"));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::validation("camera.image_size", "must be positive"));
        }
        if !(self.principal[0].is_finite() && self.principal[1].is_finite()) {
            return Err(Error::validation("camera.principal", "not finite"));
        }
        Ok(())
    }
}

/// Local tangent plane anchored at the DEM origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub lat0: f64,
    pub lon0: f64,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            lat0,
            lon0,
            m_per_deg_lat,
            m_per_deg_lon: m_per_deg_lat * lat0.to_radians().cos(),
        }
    }

    pub fn to_enu(&self, p: GeoPoint) -> Vec3 {
        Vec3::new(
            (p.lon - self.lon0) * self.m_per_deg_lon,
            (p.lat - self.lat0) * self.m_per_deg_lat,
            p.alt,
        )
    }

    pub fn to_geo(&self, v: Vec3) -> GeoPoint {
        GeoPoint::new(
            self.lat0 + v.y / self.m_per_deg_lat,
            self.lon0 + v.x / self.m_per_deg_lon,
            v.z,
        )
    }

    pub fn meters_per_degree(&self) -> (f64, f64) {
        (self.m_per_deg_lat, self.m_per_deg_lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dem: DemGrid,
    pub roads: RoadNetwork,
    pub buildings: Vec<BuildingPrism>,
    pub camera: Camera,
}

impl Scene {
    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.dem.origin.lat, self.dem.origin.lon)
    }

    /// Terrain height at an ENU ground position, `None` outside the grid.
    pub fn terrain_height_enu(&self, e: f64, n: f64) -> Option<f64> {
        let g = self.frame().to_geo(Vec3::new(e, n, 0.0));
        self.dem.height_at(g.lat, g.lon).ok()
    }

    /// Horizontal DEM cell size in meters (north, east).
    pub fn cell_meters(&self) -> (f64, f64) {
        let (mlat, mlon) = self.frame().meters_per_degree();
        (self.dem.cell_size.lat * mlat, self.dem.cell_size.lon * mlon)
    }

    pub fn validate(&self) -> Result<()> {
        self.dem.validate()?;
        self.camera.validate()?;
        let mut ids = HashSet::new();
        for (i, seg) in self.roads.segments.iter().enumerate() {
            let field = format!("roads[{i}]");
            if !ids.insert(seg.id) {
                return Err(Error::validation(format!("{field}.id"), "duplicate road id"));
            }
            if seg.polyline.len() < 2 {
                return Err(Error::validation(
                    format!("{field}.points"),
                    "polyline needs at least 2 points",
                ));
            }
            for (j, p) in seg.polyline.iter().enumerate() {
                p.validate(&format!("{field}.points[{j}]"))?;
            }
            if let Some(j) = seg
                .polyline
                .windows(2)
                .position(|w| w[0].lat == w[1].lat && w[0].lon == w[1].lon)
            {
                return Err(Error::validation(
                    format!("{field}.points[{}]", j + 1),
                    "repeats the previous point",
                ));
            }
        }
        let mut ids = HashSet::new();
        for (i, b) in self.buildings.iter().enumerate() {
            if !ids.insert(b.id) {
                return Err(Error::validation(format!("buildings[{i}].id"), "duplicate building id"));
            }
            b.validate(&format!("buildings[{i}]"))?;
        }
        Ok(())
    }

    /// Parses and validates a scene document, filling absent road altitudes
    /// from the DEM.
    pub fn from_json_str(text: &str) -> Result<Scene> {
        let doc: SceneDoc = serde_json::from_str(text).map_err(|e| Error::parse("scene", e))?;
        if doc.format != SCENE_FORMAT {
            return Err(Error::validation("format", format!("expected `{SCENE_FORMAT}`")));
        }
        if doc.version != SCENE_VERSION {
            return Err(Error::validation(
                "version",
                format!("unsupported version {}", doc.version),
            ));
        }
        doc.dem.validate()?;
        let mut segments = Vec::with_capacity(doc.roads.len());
        for (i, r) in doc.roads.into_iter().enumerate() {
            let mut polyline = Vec::with_capacity(r.points.len());
            for (j, p) in r.points.into_iter().enumerate() {
                let alt = match p.alt {
                    Some(a) => a,
                    None => doc.dem.height_at(p.lat, p.lon).map_err(|_| {
                        Error::validation(
                            format!("roads[{i}].points[{j}]"),
                            "no altitude and outside the DEM",
                        )
                    })?,
                };
                polyline.push(GeoPoint::new(p.lat, p.lon, alt));
            }
            segments.push(RoadSegment {
                id: r.id,
                polyline,
                source: r.source,
            });
        }
        let scene = Scene {
            dem: doc.dem,
            roads: RoadNetwork { segments },
            buildings: doc.buildings,
            camera: doc.camera,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_string(&self) -> String {
        let doc = SceneDoc {
            format: SCENE_FORMAT.to_string(),
            version: SCENE_VERSION,
            dem: self.dem.clone(),
            roads: self
                .roads
                .segments
                .iter()
                .map(|s| RoadDoc {
                    id: s.id,
                    source: s.source.clone(),
                    points: s
                        .polyline
                        .iter()
                        .map(|p| PointDoc {
                            lat: p.lat,
                            lon: p.lon,
                            alt: Some(p.alt),
                        })
                        .collect(),
                })
                .collect(),
            buildings: self.buildings.clone(),
            camera: self.camera.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scene::from_json_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    format: String,
    version: u32,
    dem: DemGrid,
    roads: Vec<RoadDoc>,
    #[serde(default)]
    buildings: Vec<BuildingPrism>,
    camera: Camera,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadDoc {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    points: Vec<PointDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointDoc {
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt: Option<f64>,
}
