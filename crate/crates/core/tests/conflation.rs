mod common;

use std::sync::OnceLock;

use obval::conflation::{conflate_segment, search_first_positive, smooth_chain, SearchLine, SearchParams, Side};
use obval::descriptors::{DescriptorExtractor, DescriptorParams};
use obval::geom::Vec2;
use obval::pipeline::train_from_rows;
use obval::projection::{sample_segments, PinholeView, ProjectedSample};
use obval::svm::{SvmModel, TrainParams};
use obval::synthgen::{RoadFamily, Rendered, TerrainKind};

const OFFSET: f64 = 30.0;

struct Fixture {
    rendered: Rendered,
    model: SvmModel,
    /// Framed samples of the longest road, on the true centerline.
    on_road: Vec<ProjectedSample>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut recipe = common::corpus_recipe(4);
        recipe.terrain = TerrainKind::Flat;
        recipe.roads.count = 1;
        recipe.roads.family = RoadFamily::Straight;
        recipe.buildings.count = 0;
        recipe.buildings.occluders = 0;
        let labeled = common::labeled_from_recipe(&recipe, 300);
        let params = DescriptorParams::default();
        let model = train_from_rows(&labeled.rows, params, &TrainParams::default()).unwrap();
        let rendered = labeled.rendered;
        let (w, h) = rendered.image.dimensions();
        let framed: Vec<ProjectedSample> = sample_segments(&rendered.scene, 12.0)
            .into_iter()
            .filter(|s| s.visible && params.fits(w, h, s.px))
            .collect();
        let longest = rendered
            .scene
            .roads
            .segments
            .iter()
            .map(|seg| (framed.iter().filter(|s| s.segment_id == seg.id).count(), seg.id))
            .max()
            .unwrap()
            .1;
        let on_road = framed.into_iter().filter(|s| s.segment_id == longest).collect();
        Fixture { rendered, model, on_road }
    })
}

/// Samples moved so the true road lies `offset` px along their +normal,
/// keeping only those whose search lines start inside the frame.
fn displaced(offset: f64) -> Vec<ProjectedSample> {
    let f = fixture();
    let (w, h) = f.rendered.image.dimensions();
    let params = DescriptorParams::default();
    f.on_road
        .iter()
        .map(|s| ProjectedSample {
            px: s.px - s.normal_dir * offset,
            ..*s
        })
        .filter(|s| params.fits(w, h, s.px))
        .collect()
}

fn detections(samples: &[ProjectedSample], model: &SvmModel, params: &SearchParams) -> Vec<[Option<obval::conflation::Detection>; 2]> {
    let f = fixture();
    let ex = DescriptorExtractor::new(model.descriptor).unwrap();
    samples
        .iter()
        .map(|s| {
            let line = SearchLine::from_sample(s, params);
            search_first_positive(&ex, &f.rendered.image, model, &line, params.min_run_px).unwrap()
        })
        .collect()
}

/// Default search over twice the offset.
fn near_params() -> SearchParams {
    SearchParams {
        half_length_px: 2.0 * OFFSET,
        ..SearchParams::default()
    }
}

#[test]
fn offset_road_is_found_on_the_plus_side_only() {
    let f = fixture();
    let params = near_params();
    let samples = displaced(OFFSET);
    assert!(samples.len() >= 10, "{} samples", samples.len());
    let found = detections(&samples, &f.model, &params);
    let near = found
        .iter()
        .filter(|d| d[0].is_some_and(|d| (d.distance_px - OFFSET).abs() <= params.step_px))
        .count();
    assert!(near * 10 >= samples.len() * 9, "{near} of {} plus detections near {OFFSET} px", samples.len());
    assert!(found.iter().all(|d| d[1].is_none()), "{found:?}");
}

#[test]
fn reject_all_model_finds_nothing() {
    let f = fixture();
    let mut model = f.model.clone();
    model.bias = -1e9;
    let params = SearchParams::default();
    let found = detections(&displaced(OFFSET), &model, &params);
    assert!(found.iter().all(|d| d[0].is_none() && d[1].is_none()));
}

#[test]
fn zero_offset_detects_within_one_step() {
    let f = fixture();
    // the positive band is narrower than one step, so a single hit must do
    let params = SearchParams { min_run_px: 0.0, ..near_params() };
    let samples = displaced(0.0);
    let found = detections(&samples, &f.model, &params);
    let within = found
        .iter()
        .filter(|d| d.iter().flatten().any(|d| d.distance_px <= params.step_px))
        .count();
    assert!(within * 10 >= samples.len() * 9, "{within} of {}", samples.len());
}

#[test]
fn corrected_polyline_points_classify_positive() {
    let f = fixture();
    let result = conflate_segment(&f.rendered.scene, &f.rendered.image, &f.model, &displaced(OFFSET), &SearchParams::default()).unwrap();
    let plus = result.corrected.iter().find(|c| c.side == Side::Plus).expect("plus polyline");
    let ex = DescriptorExtractor::new(f.model.descriptor).unwrap();
    let frame = result.lines[0].primary_dir;
    for p in &plus.image {
        let probe = ProjectedSample {
            px: *p,
            primary_dir: frame,
            normal_dir: frame.perp(),
            ..f.on_road[0]
        };
        let d = ex.describe(&f.rendered.image, &probe, &f.model.color_scaling).expect("framed").unwrap();
        assert!(f.model.predict(&d.values).unwrap().class > 0, "{p:?}");
    }
}

#[test]
fn corrected_geometry_reprojects_onto_smoothed_detections() {
    let f = fixture();
    let params = SearchParams::default();
    let result = conflate_segment(&f.rendered.scene, &f.rendered.image, &f.model, &displaced(OFFSET), &params).unwrap();
    let plus = result.corrected.iter().find(|c| c.side == Side::Plus).expect("plus polyline");
    let chain: Vec<Vec2> = result.detections.iter().filter_map(|d| d[0].map(|d| d.center)).collect();
    let smoothed = smooth_chain(&chain, params.smoothing_window);
    assert_eq!(smoothed.len(), plus.geo.len());
    let view = PinholeView::of_scene(&f.rendered.scene);
    let frame = f.rendered.scene.frame();
    for ((g, want), stored) in plus.geo.iter().zip(&smoothed).zip(&plus.image) {
        let got = view.project(frame.to_enu(*g)).pixel().unwrap();
        assert!((got - *want).norm() <= 0.5, "{got:?} vs {want:?}");
        assert_eq!(got, *stored);
    }
}

#[test]
fn finer_steps_never_increase_the_error() {
    let f = fixture();
    let (w, h) = f.rendered.image.dimensions();
    let descriptor = DescriptorParams::default();
    // true offsets spread over one coarse step so no step size gets a lucky phase
    let samples: Vec<(ProjectedSample, f64)> = f
        .on_road
        .iter()
        .flat_map(|s| {
            (0..8).map(move |j| {
                let offset = OFFSET + j as f64;
                (ProjectedSample { px: s.px - s.normal_dir * offset, ..*s }, offset)
            })
        })
        .filter(|(s, _)| descriptor.fits(w, h, s.px))
        .collect();
    let error = |step_px: f64| {
        let params = SearchParams { step_px, ..near_params() };
        let probes: Vec<ProjectedSample> = samples.iter().map(|(s, _)| *s).collect();
        let found = detections(&probes, &f.model, &params);
        // a missed line counts as the whole search length
        let total: f64 = samples
            .iter()
            .zip(&found)
            .map(|((s, offset), d)| d[0].map_or(params.half_length_px, |d| ((d.center - s.px).norm() - offset).abs()))
            .sum();
        total / samples.len() as f64
    };
    let errors: Vec<f64> = [8.0, 4.0, 2.0, 1.0].into_iter().map(error).collect();
    for w in errors.windows(2) {
            assert!(w[1] <= w[0], "mean errors by step 8, 4, 2, 1 px: {errors:?}");
    }
}
