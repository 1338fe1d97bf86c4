//! Synthetic benchmark shared by the integration tests.

#![allow(dead_code)]

use obval::descriptors::dump::DumpRow;
use obval::descriptors::DescriptorParams;
use obval::pipeline::extract_rows;
use obval::scene::Scene;
use obval::synthgen::{
    inject, label_samples, render, BuildingRecipe, ErrorInjection, InjectionKind, LabelBudget, Rendered, RoadFamily,
    RoadRecipe, SceneRecipe, TerrainKind, TextureRecipe,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Varied recipe for corpus scene `seed`.
pub fn corpus_recipe(seed: u64) -> SceneRecipe {
    let terrain = [TerrainKind::Flat, TerrainKind::Hill, TerrainKind::Ridge][(seed % 3) as usize];
    let family = [RoadFamily::Straight, RoadFamily::Arc, RoadFamily::SCurve][(seed / 3 % 3) as usize];
    // asphalt darker than the ground in half the scenes, concrete brighter in the rest
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e87);
    let background = rng.random_range(0.3..0.45);
    let road = if seed.is_multiple_of(2) {
        rng.random_range(0.1..0.2)
    } else {
        rng.random_range(0.6..0.8)
    };
    SceneRecipe {
        seed,
        terrain,
        roads: RoadRecipe {
            count: 2,
            family,
            ..RoadRecipe::default()
        },
        buildings: BuildingRecipe {
            count: 10,
            occluders: (seed % 2) as usize,
            ..BuildingRecipe::default()
        },
        texture: TextureRecipe {
            road_albedo: road,
            background_albedo: background,
            clutter: rng.random_range(0.4..0.9),
            noise_sigma: 3.0,
        },
        ..SceneRecipe::default()
    }
}

/// Corrupts every other segment of `truth` by a lateral offset in 15..60 px
/// of alternating sign.
pub fn offset_every_other(truth: &Scene, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ff5e7);
    let mut scene = truth.clone();
    let ids: Vec<u32> = truth.roads.segments.iter().map(|s| s.id).collect();
    for (k, id) in ids.iter().enumerate().filter(|(k, _)| k % 2 == 0) {
        let sign = if k % 4 == 0 { 1.0 } else { -1.0 };
        let mag = sign * rng.random_range(15.0..60.0);
        if let Ok(s) = inject(&scene, &ErrorInjection::new(InjectionKind::VectorOffsetPx, mag, vec![*id])) {
            scene = s;
        }
    }
    scene
}

pub struct LabeledScene {
    pub rendered: Rendered,
    pub corrupted: Scene,
    pub rows: Vec<DumpRow>,
}

pub fn labeled_scene(seed: u64, per_class: usize) -> LabeledScene {
    labeled_from_recipe(&corpus_recipe(seed), per_class)
}

pub fn labeled_from_recipe(recipe: &SceneRecipe, per_class: usize) -> LabeledScene {
    let seed = recipe.seed;
    let rendered = render(recipe).expect("render");
    let corrupted = offset_every_other(&rendered.scene, seed);
    let params = DescriptorParams::default();
    let budget = LabelBudget {
        positives: per_class,
        negatives: per_class,
        spacing_px: 12.0,
        seed,
    };
    let samples = label_samples(&rendered, &corrupted, &params, &budget).expect("labels");
    let rows = extract_rows(&rendered.image, &samples, params).expect("extract");
    LabeledScene { rendered, corrupted, rows }
}

/// Training rows from scenes 1..=10 and held-out rows from scenes 101..=102.
pub struct Benchmark {
    pub train: Vec<DumpRow>,
    pub test: Vec<DumpRow>,
}

pub fn benchmark(train_per_class: usize, test_per_class: usize) -> Benchmark {
    use rayon::prelude::*;
    let train: Vec<DumpRow> = (1..=10u64)
        .into_par_iter()
        .map(|s| labeled_scene(s, train_per_class).rows)
        .collect::<Vec<_>>()
        .concat();
    let test: Vec<DumpRow> = (101..=102u64)
        .into_par_iter()
        .map(|s| labeled_scene(s, test_per_class).rows)
        .collect::<Vec<_>>()
        .concat();
    Benchmark { train, test }
}
