use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Hill,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadFamily {
    Straight,
    Arc,
    SCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadRecipe {
    pub count: usize,
    pub family: RoadFamily,
    /// Road width on the ground.
    pub width_m: f64,
    /// Length of the stored vector segments each road is cut into.
    pub segment_length_m: f64,
    /// Explicit road placements; overrides the random layout when non-empty.
    pub layout: Vec<RoadPlacement>,
}

impl Default for RoadRecipe {
    fn default() -> Self {
        Self {
            count: 2,
            family: RoadFamily::Straight,
            width_m: 8.0,
            segment_length_m: 60.0,
            layout: Vec::new(),
        }
    }
}

/// A road through a point given in meters relative to the image center's
/// ground point, heading in degrees clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadPlacement {
    pub east_m: f64,
    pub north_m: f64,
    pub heading_deg: f64,
    pub family: RoadFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingRecipe {
    pub count: usize,
    pub min_size_m: f64,
    pub max_size_m: f64,
    pub min_height_m: f64,
    pub max_height_m: f64,
    /// Buildings placed beside a road on the camera side so they hide it.
    pub occluders: usize,
}

impl Default for BuildingRecipe {
    fn default() -> Self {
        Self {
            count: 8,
            min_size_m: 12.0,
            max_size_m: 30.0,
            min_height_m: 6.0,
            max_height_m: 30.0,
            occluders: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureRecipe {
    /// Road reflectance in [0, 1].
    pub road_albedo: f64,
    /// Mean ground reflectance in [0, 1].
    pub background_albedo: f64,
    /// Strength of ground texture and dark blobs in [0, 1].
    pub clutter: f64,
    /// Per-channel pixel noise, 8-bit units.
    pub noise_sigma: f64,
}

impl Default for TextureRecipe {
    fn default() -> Self {
        Self {
            road_albedo: 0.7,
            background_albedo: 0.3,
            clutter: 0.5,
            noise_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRecipe {
    pub seed: u64,
    pub terrain: TerrainKind,
    /// Peak terrain relief for hill and ridge terrain.
    pub relief_m: f64,
    pub roads: RoadRecipe,
    pub buildings: BuildingRecipe,
    /// Camera angle from the vertical; random in [30, 45] when absent.
    pub oblique_deg: Option<f64>,
    /// Camera heading; random when absent.
    pub heading_deg: Option<f64>,
    pub image_size: [u32; 2],
    /// Ground sample distance at the image center.
    pub gsd_m: f64,
    pub texture: TextureRecipe,
    /// Latitude and longitude of the image center's ground point.
    pub anchor: [f64; 2],
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            seed: 1,
            terrain: TerrainKind::Flat,
            relief_m: 25.0,
            roads: RoadRecipe::default(),
            buildings: BuildingRecipe::default(),
            oblique_deg: None,
            heading_deg: None,
            image_size: [1024, 768],
            gsd_m: 0.45,
            texture: TextureRecipe::default(),
            anchor: [47.6, -122.3],
        }
    }
}

fn unit_interval(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(field, "must lie in [0, 1]"))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, "must be positive"))
    }
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.oblique_deg {
            if !(30.0..=45.0).contains(&a) {
                return Err(Error::validation("oblique_deg", "must lie in [30, 45]"));
            }
        }
        if let Some(h) = self.heading_deg {
            if !h.is_finite() {
                return Err(Error::validation("heading_deg", "not finite"));
            }
        }
        if self.image_size[0] < 64 || self.image_size[1] < 64 {
            return Err(Error::validation("image_size", "must be at least 64x64"));
        }
        positive("gsd_m", self.gsd_m)?;
        positive("roads.width_m", self.roads.width_m)?;
        positive("roads.segment_length_m", self.roads.segment_length_m)?;
        if !(self.relief_m.is_finite() && self.relief_m >= 0.0) {
            return Err(Error::validation("relief_m", "must be non-negative"));
        }
        let b = &self.buildings;
        positive("buildings.min_size_m", b.min_size_m)?;
        positive("buildings.min_height_m", b.min_height_m)?;
        if b.max_size_m < b.min_size_m || b.max_height_m < b.min_height_m {
            return Err(Error::validation("buildings", "max below min"));
        }
        let t = &self.texture;
        unit_interval("texture.road_albedo", t.road_albedo)?;
        unit_interval("texture.background_albedo", t.background_albedo)?;
        unit_interval("texture.clutter", t.clutter)?;
        if !(t.noise_sigma.is_finite() && t.noise_sigma >= 0.0) {
            return Err(Error::validation("texture.noise_sigma", "must be non-negative"));
        }
        if !(self.anchor[0].abs() < 80.0 && self.anchor[1].abs() <= 180.0) {
            return Err(Error::validation("anchor", "latitude must be within 80 degrees of the equator"));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let r: SceneRecipe = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_json_fills_in() {
        SceneRecipe::default().validate().unwrap();
        let r = SceneRecipe::from_json_str(r#"{"seed": 9, "roads": {"count": 1}}"#, "r").unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.roads.count, 1);
        assert_eq!(r.roads.width_m, 8.0);
    }

    #[test]
    fn oblique_angle_range() {
        let r = SceneRecipe {
            oblique_deg: Some(20.0),
            ..SceneRecipe::default()
        };
        assert!(r.validate().is_err());
        assert!(SceneRecipe::from_json_str(r#"{"bogus": 1}"#, "r").is_err());
    }
}
