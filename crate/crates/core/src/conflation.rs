//! Correction of inconsistent road segments by searching perpendicular to
//! the projected vector for image evidence of the road.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorExtractor, DESCRIPTOR_LEN};
use crate::draw;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::pipeline::{Validation, Verdict};
use crate::projection::{back_project_to_terrain, PinholeView, ProjectedSample};
use crate::scene::{GeoPoint, RoadSegment, Scene};
use crate::svm::SvmModel;

pub const CONFLATION_SOURCE: &str = "conflation";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Search distance on each side of the vector.
    pub half_length_px: f64,
    pub step_px: f64,
    /// Minimum share of search lines with a detection for a side to count.
    pub min_line_fraction: f64,
    pub min_detections: usize,
    /// Shortest span of consecutive positive steps accepted as a detection;
    /// zero accepts a single positive step.
    pub min_run_px: f64,
    /// Points in the moving line fit used for smoothing.
    pub smoothing_window: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            half_length_px: 100.0,
            step_px: 4.0,
            min_line_fraction: 0.5,
            min_detections: 3,
            min_run_px: 4.0,
            smoothing_window: 5,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_length_px.is_finite() && self.half_length_px > 0.0) {
            return Err(Error::validation("half_length_px", "must be positive"));
        }
        if !(self.step_px.is_finite() && self.step_px > 0.0) {
            return Err(Error::validation("step_px", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_line_fraction) {
            return Err(Error::validation("min_line_fraction", "must lie in [0, 1]"));
        }
        if !(self.min_run_px.is_finite() && self.min_run_px >= 0.0) {
            return Err(Error::validation("min_run_px", "must be non-negative"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::validation("smoothing_window", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLine {
    pub origin_px: Vec2,
    /// Unit search direction; the negative side walks along its opposite.
    pub direction: Vec2,
    /// Descriptor frame of the originating sample.
    pub primary_dir: Vec2,
    pub half_length_px: f64,
    pub step_px: f64,
}

impl SearchLine {
    pub fn from_sample(s: &ProjectedSample, params: &SearchParams) -> Self {
        Self {
            origin_px: s.px,
            direction: s.normal_dir,
            primary_dir: s.primary_dir,
            half_length_px: params.half_length_px,
            step_px: params.step_px,
        }
    }

    fn point(&self, side: Side, k: usize) -> Vec2 {
        self.origin_px + self.direction * (side.sign() * k as f64 * self.step_px)
    }

    fn steps(&self) -> usize {
        (self.half_length_px / self.step_px + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

/// Hit on one side of a search line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// First step classified positive.
    pub first: Vec2,
    /// Middle of the run of positive steps starting at `first`.
    pub center: Vec2,
    /// Distance of `first` from the origin.
    pub distance_px: f64,
}

fn classify(extractor: &DescriptorExtractor, image: &RgbImage, model: &SvmModel, line: &SearchLine, p: Vec2) -> Result<Option<bool>> {
    let normal = line.primary_dir.perp();
    let Some(patch) = extractor.extract_patch(image, p, line.primary_dir, normal) else {
        return Ok(None);
    };
    let raw: [f64; DESCRIPTOR_LEN] = extractor.families(&patch).concat();
    let d = crate::descriptors::compose(&raw, &model.color_scaling)?;
    Ok(Some(model.predict(&d.values)?.class > 0))
}

/// Walks each side of `line` outward, starting at the origin, and reports
/// the first run of positive steps spanning at least `min_run_px`: its first step and
/// its center. Steps whose patch leaves the image end that side's walk.
pub fn search_first_positive(
    extractor: &DescriptorExtractor,
    image: &RgbImage,
    model: &SvmModel,
    line: &SearchLine,
    min_run_px: f64,
) -> Result<[Option<Detection>; 2]> {
    let long_enough = |(a, b): &(usize, usize)| (b - a) as f64 * line.step_px + 1e-9 >= min_run_px;
    let mut out = [None, None];
    for (slot, side) in out.iter_mut().zip([Side::Plus, Side::Minus]) {
        let mut run: Option<(usize, usize)> = None;
        let mut found = None;
        for k in 0..=line.steps() {
            let positive = classify(extractor, image, model, line, line.point(side, k))?;
            if positive == Some(true) {
                run = Some(run.map_or((k, k), |(a, _)| (a, k)));
                continue;
            }
            if let Some(r) = run.take().filter(long_enough) {
                found = Some(r);
                break;
            }
            if positive.is_none() {
                break;
            }
        }
        let found = found.or(run.filter(long_enough));
        if let Some((k0, k1)) = found {
            let mid = 0.5 * (k0 + k1) as f64 * line.step_px * side.sign();
            *slot = Some(Detection {
                first: line.point(side, k0),
                center: line.origin_px + line.direction * mid,
                distance_px: k0 as f64 * line.step_px,
            });
        }
    }
    Ok(out)
}

/// Total least-squares line through `pts`: centroid and unit direction.
fn fit_line(pts: &[Vec2]) -> (Vec2, Option<Vec2>) {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec2::default(), |a, p| a + *p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    if sxx + syy < 1e-18 {
        return (c, None);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (c, Some(Vec2::new(theta.cos(), theta.sin())))
}

/// Replaces every point by its projection onto the line fitted to the
/// `window` points around it. Windows of four or more points are refitted
/// without their worst point, so a single outlier does not bend the line.
pub fn smooth_chain(pts: &[Vec2], window: usize) -> Vec<Vec2> {
    let half = window / 2;
    (0..pts.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(pts.len());
            if hi - lo < 2 {
                return pts[i];
            }
            let fit = if hi - lo >= 4 {
                // keep the leave-one-out subset that lies closest to a line
                (lo..hi)
                    .map(|skip| {
                        let kept: Vec<Vec2> = (lo..hi).filter(|&k| k != skip).map(|k| pts[k]).collect();
                        let fit = fit_line(&kept);
                        let spread: f64 = match fit {
                            (c, Some(dir)) => kept.iter().map(|p| (*p - c).cross(dir).powi(2)).sum(),
                            _ => 0.0,
                        };
                        (spread, fit)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("non-empty window")
                    .1
            } else {
                fit_line(&pts[lo..hi])
            };
            match fit {
                (c, Some(dir)) => c + dir * (pts[i] - c).dot(dir),
                (c, None) => c,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedPolyline {
    pub side: Side,
    pub image: Vec<Vec2>,
    /// Terrain intersections of `image`; points whose ray misses the DEM
    /// are dropped from both lists.
    pub geo: Vec<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflationResult {
    pub segment_id: u32,
    pub lines: Vec<SearchLine>,
    /// Per search line, plus side then minus side.
    pub detections: Vec<[Option<Detection>; 2]>,
    pub corrected: Vec<CorrectedPolyline>,
}

/// Searches around the samples of one segment and builds up to two
/// corrected polylines.
pub fn conflate_segment(
    scene: &Scene,
    image: &RgbImage,
    model: &SvmModel,
    samples: &[ProjectedSample],
    params: &SearchParams,
) -> Result<ConflationResult> {
    params.validate()?;
    let segment_id = samples.first().map(|s| s.segment_id).unwrap_or(0);
    if samples.len() < params.min_detections.max(1) {
        return Err(Error::Empty(format!("segment {segment_id} has {} samples", samples.len())));
    }
    let extractor = DescriptorExtractor::new(model.descriptor)?;
    let lines: Vec<SearchLine> = samples.iter().map(|s| SearchLine::from_sample(s, params)).collect();
    let detections: Vec<[Option<Detection>; 2]> = lines
        .par_iter()
        .map(|l| search_first_positive(&extractor, image, model, l, params.min_run_px))
        .collect::<Result<_>>()?;
    let view = PinholeView::of_scene(scene);
    let frame = scene.frame();
    let mut corrected = Vec::new();
    for (k, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        let chain: Vec<Vec2> = detections.iter().filter_map(|d| d[k].map(|d| d.center)).collect();
        let needed = (params.min_line_fraction * lines.len() as f64).ceil() as usize;
        if chain.len() < params.min_detections.max(needed) {
            continue;
        }
        let smoothed = smooth_chain(&chain, params.smoothing_window);
        let mut img = Vec::new();
        let mut geo = Vec::new();
        for p in smoothed {
            if let Some(g) = back_project_to_terrain(scene, &view, p) {
                // report the re-projection of the stored point
                let q = view.project(frame.to_enu(g)).pixel().unwrap_or(p);
                img.push(q);
                geo.push(g);
            }
        }
        if geo.len() >= 2 {
            corrected.push(CorrectedPolyline { side, image: img, geo });
        }
    }
    Ok(ConflationResult { segment_id, lines, detections, corrected })
}

/// Conflates every inconsistent segment of a validation run.
pub fn conflate(
    scene: &Scene,
    image: &RgbImage,
    model: &SvmModel,
    validation: &Validation,
    params: &SearchParams,
) -> Result<Vec<ConflationResult>> {
    let targets: Vec<u32> = validation
        .segments
        .iter()
        .filter(|r| r.verdict == Verdict::Inconsistent)
        .map(|r| r.segment_id)
        .collect();
    targets
        .par_iter()
        .map(|&id| {
            let samples: Vec<ProjectedSample> = validation
                .segment_samples(id)
                .into_iter()
                .filter(|(s, _)| s.visible)
                .map(|(s, _)| s)
                .collect();
            if samples.len() < params.min_detections.max(1) {
                return Ok(None);
            }
            conflate_segment(scene, image, model, &samples, params).map(Some)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Copy of `scene` with every corrected polyline appended as a new segment
/// tagged with [`CONFLATION_SOURCE`].
pub fn corrected_scene(scene: &Scene, results: &[ConflationResult]) -> Scene {
    let mut out = scene.clone();
    let mut next = scene.roads.segments.iter().map(|s| s.id).max().unwrap_or(0) + 1;
    for r in results {
        for c in &r.corrected {
            out.roads.segments.push(RoadSegment {
                id: next,
                polyline: c.geo.clone(),
                source: Some(CONFLATION_SOURCE.to_string()),
            });
            next += 1;
        }
    }
    out
}

/// Search lines in green, detections circled in yellow, corrected
/// polylines in magenta, the original vector in red.
pub fn annotate_conflation(image: &RgbImage, results: &[ConflationResult]) -> RgbImage {
    let mut out = image.clone();
    for r in results {
        for l in &r.lines {
            let a = l.origin_px - l.direction * l.half_length_px;
            let b = l.origin_px + l.direction * l.half_length_px;
            draw::line(&mut out, a, b, 1.0, draw::GREEN);
        }
        let origins: Vec<Vec2> = r.lines.iter().map(|l| l.origin_px).collect();
        draw::polyline(&mut out, &origins, 2.5, draw::RED);
        for d in r.detections.iter().flatten().flatten() {
            draw::ring(&mut out, d.center, 5.0, 1.5, draw::YELLOW);
        }
        for c in &r.corrected {
            draw::polyline(&mut out, &c.image, 2.5, draw::MAGENTA);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_fixes_collinear_points() {
        let pts: Vec<Vec2> = (0..9).map(|k| Vec2::new(3.0 + 2.0 * k as f64, 1.0 - 0.5 * k as f64)).collect();
        for (a, b) in smooth_chain(&pts, 5).iter().zip(&pts) {
            assert!((*a - *b).norm() < 1e-9);
        }
    }

    #[test]
    fn smoothing_rejects_single_outlier() {
        let mut pts: Vec<Vec2> = (0..7).map(|k| Vec2::new(k as f64 * 4.0, 0.0)).collect();
        pts[3].y = 4.0;
        let s = smooth_chain(&pts, 5);
        for p in &s {
            assert!(p.y.abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn fitted_direction_matches_points() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)];
        let (_, d) = fit_line(&pts);
        let d = d.unwrap();
        assert!((d.x.abs() - d.y.abs()).abs() < 1e-12);
    }

    #[test]
    fn params_validate() {
        SearchParams::default().validate().unwrap();
        assert!(SearchParams { step_px: 0.0, ..SearchParams::default() }.validate().is_err());
    }
}
