//! Synthetic oblique scenes with exact ground truth, error injection and
//! training-sample labeling.

pub mod inject;
pub mod label;
pub mod layout;
pub mod recipe;
pub mod render;

use image::RgbImage;

pub use inject::{inject, ErrorInjection, InjectionKind};
pub use label::{label_samples, read_samples, write_samples, LabelBudget, SAMPLES_HEADER};
pub use recipe::{BuildingRecipe, RoadFamily, RoadPlacement, RoadRecipe, SceneRecipe, TerrainKind, TextureRecipe};
pub use render::PixelClass;

use crate::error::Result;
use crate::geom::{Vec2, Vec3};
use crate::projection::PinholeView;
use crate::scene::Scene;
use render::{Geometry, Raster, Shader};

/// A rendered scene together with the ground truth used to draw it.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub scene: Scene,
    pub image: RgbImage,
    /// Row-major [`PixelClass`] bytes.
    pub classes: Vec<u8>,
    /// Row-major camera depth of the visible surface; infinite for sky.
    pub depth: Vec<f64>,
    pub road_width_m: f64,
    /// Full densified road centerlines in scene ENU.
    pub centerlines: Vec<Vec<Vec3>>,
    /// Buildings placed to hide a road stretch.
    pub occluder_ids: Vec<u32>,
    seed: u64,
    texture: TextureRecipe,
}

impl Rendered {
    pub fn class_at(&self, x: u32, y: u32) -> PixelClass {
        let i = y as usize * self.image.width() as usize + x as usize;
        PixelClass::from_u8(self.classes[i]).expect("valid class byte")
    }

    /// World point seen at pixel `(x, y)`, `None` for sky.
    pub fn surface_point(&self, x: u32, y: u32) -> Option<Vec3> {
        let d = self.depth[y as usize * self.image.width() as usize + x as usize];
        d.is_finite()
            .then(|| PinholeView::of_scene(&self.scene).back_project_at_depth(Vec2::new(x as f64, y as f64), d))
    }

    fn flat_centerlines(&self) -> Vec<Vec<Vec2>> {
        self.centerlines.iter().map(|l| l.iter().map(|p| p.xy()).collect()).collect()
    }

    /// Triangle geometry of the scene, for exact per-point visibility queries.
    pub fn geometry(&self) -> Geometry {
        Geometry::new(&self.scene)
    }

    /// Class of the surface seen through an arbitrary (sub-pixel) image point.
    pub fn class_at_point(&self, geometry: &Geometry, px: Vec2) -> PixelClass {
        let lines = self.flat_centerlines();
        Shader::new(&self.scene, geometry, &lines, self.road_width_m, self.texture.clone(), self.seed).class_at_point(px)
    }

    /// Class map rendered as a color image for inspection.
    pub fn class_image(&self) -> RgbImage {
        let palette = [[180, 210, 240], [90, 130, 70], [250, 250, 250], [200, 120, 60], [120, 40, 40]];
        RgbImage::from_fn(self.image.width(), self.image.height(), |x, y| {
            image::Rgb(palette[self.class_at(x, y) as usize])
        })
    }
}

/// Builds the scene described by `recipe` and renders its image.
pub fn render(recipe: &SceneRecipe) -> Result<Rendered> {
    let layout = layout::build(recipe)?;
    let geometry = Geometry::new(&layout.scene);
    let lines: Vec<Vec<Vec2>> = layout.centerlines.iter().map(|l| l.iter().map(|p| p.xy()).collect()).collect();
    let Raster { image, classes, depth } =
        Shader::new(&layout.scene, &geometry, &lines, layout.road_width_m, recipe.texture.clone(), recipe.seed).render();
    if classes.iter().all(|&c| c == PixelClass::Sky as u8) {
        return Err(crate::error::Error::DegenerateCamera("scene lies outside the frame".into()));
    }
    Ok(Rendered {
        scene: layout.scene,
        image,
        classes,
        depth,
        road_width_m: layout.road_width_m,
        centerlines: layout.centerlines,
        occluder_ids: layout.occluder_ids,
        seed: recipe.seed,
        texture: recipe.texture.clone(),
    })
}
