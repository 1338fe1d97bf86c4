//! End-to-end stages: descriptor extraction, training from dumps and
//! per-segment validation.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::descriptors::dump::DumpRow;
use crate::descriptors::{compose, ColorScaling, DescriptorExtractor, DescriptorParams, DESCRIPTOR_LEN};
use crate::draw;
use crate::error::{Error, Result};
use crate::evaluation::{metrics, roc, run_splits, split_protocol, ConfusionCounts, Metrics};
use crate::projection::{sample_segments, Label, ProjectedSample};
use crate::scene::Scene;
use crate::svm::{train, SvmModel, TrainParams, TrainingSet};

pub const VERDICTS_HEADER: &str = "# obval-verdicts v1";

/// Raw descriptors for every sample whose patch fits in the image, in
/// sample order.
pub fn extract_rows(image: &RgbImage, samples: &[ProjectedSample], params: DescriptorParams) -> Result<Vec<DumpRow>> {
    let extractor = DescriptorExtractor::new(params)?;
    Ok(samples
        .par_iter()
        .filter_map(|s| {
            extractor.raw(image, s).map(|raw| DumpRow {
                segment_id: s.segment_id,
                u: s.px.x,
                v: s.px.y,
                raw,
                label: s.label.as_i8(),
            })
        })
        .collect())
}

/// Fits color scaling on the labeled rows and composes their descriptors.
pub fn training_set(rows: &[DumpRow]) -> Result<(TrainingSet, ColorScaling)> {
    let labeled: Vec<&DumpRow> = rows.iter().filter(|r| r.label != 0).collect();
    let scaling = ColorScaling::fit(labeled.iter().map(|r| &r.raw));
    let mut set = TrainingSet::new(DESCRIPTOR_LEN);
    for r in labeled {
        let d = compose(&r.raw, &scaling)?;
        set.push(&d.values, r.label)?;
    }
    Ok((set, scaling))
}

/// Trains a model whose metadata records how its inputs were built.
pub fn train_from_rows(rows: &[DumpRow], descriptor: DescriptorParams, params: &TrainParams) -> Result<SvmModel> {
    let (set, scaling) = training_set(rows)?;
    let mut model = train(&set, params)?;
    model.color_scaling = scaling;
    model.descriptor = descriptor;
    Ok(model)
}

/// Decision values for dump rows, using the model's color scaling.
pub fn score_rows(model: &SvmModel, rows: &[DumpRow]) -> Result<Vec<f64>> {
    rows.par_iter()
        .map(|r| {
            let d = compose(&r.raw, &model.color_scaling)?;
            Ok(model.predict(&d.values)?.score)
        })
        .collect()
}

/// Held-out performance of a model trained on one random split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub index: usize,
    pub auc: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Repeats train-and-test over `n_splits` random splits of the labeled rows,
/// holding out `n_test` rows per class each time. Metrics are taken at a
/// zero decision threshold.
pub fn evaluate_splits(
    rows: &[DumpRow],
    descriptor: DescriptorParams,
    params: &TrainParams,
    n_test: usize,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<SplitOutcome>> {
    let pos: Vec<&DumpRow> = rows.iter().filter(|r| r.label > 0).collect();
    let neg: Vec<&DumpRow> = rows.iter().filter(|r| r.label < 0).collect();
    let splits = split_protocol(pos.len(), neg.len(), n_test, n_splits, seed)?;
    run_splits(&splits, |split| {
        let pick = |class: &[&DumpRow], idx: &[usize]| idx.iter().map(|&i| *class[i]).collect::<Vec<_>>();
        let mut train_rows = pick(&pos, &split.train_pos);
        train_rows.extend(pick(&neg, &split.train_neg));
        let mut test_rows = pick(&pos, &split.test_pos);
        test_rows.extend(pick(&neg, &split.test_neg));
        let model = train_from_rows(&train_rows, descriptor, params)?;
        let scored: Vec<(f64, i8)> = score_rows(&model, &test_rows)?
            .into_iter()
            .zip(&test_rows)
            .map(|(s, r)| (s, r.label))
            .collect();
        let counts = ConfusionCounts::at_threshold(&scored, 0.0);
        Ok(SplitOutcome {
            index: split.index,
            auc: roc(&scored)?.auc,
            counts,
            metrics: metrics(counts),
        })
    })
}

/// Decision value per sample; `None` for hidden samples and samples whose
/// patch leaves the image.
pub fn score_samples(image: &RgbImage, model: &SvmModel, samples: &[ProjectedSample]) -> Result<Vec<Option<f64>>> {
    let extractor = DescriptorExtractor::new(model.descriptor)?;
    samples
        .par_iter()
        .map(|s| {
            if !s.visible {
                return Ok(None);
            }
            match extractor.describe(image, s, &model.color_scaling) {
                None => Ok(None),
                Some(d) => Ok(Some(model.predict(&d?.values)?.score)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// At least half of the classified samples agree with the image.
    Consistent,
    Inconsistent,
    /// Every in-image sample is hidden.
    Occluded,
    /// No sample could be classified.
    Unsampled,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Occluded => "occluded",
            Verdict::Unsampled => "unsampled",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "consistent" => Verdict::Consistent,
            "inconsistent" => Verdict::Inconsistent,
            "occluded" => Verdict::Occluded,
            "unsampled" => Verdict::Unsampled,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub segment_id: u32,
    pub samples: usize,
    pub hidden: usize,
    pub scored: usize,
    pub positive: usize,
    pub verdict: Verdict,
}

impl SegmentReport {
    pub fn positive_fraction(&self) -> Option<f64> {
        (self.scored > 0).then(|| self.positive as f64 / self.scored as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub samples: Vec<ProjectedSample>,
    pub scores: Vec<Option<f64>>,
    /// One report per scene segment, in scene order.
    pub segments: Vec<SegmentReport>,
}

impl Validation {
    pub fn report(&self, segment_id: u32) -> Option<&SegmentReport> {
        self.segments.iter().find(|r| r.segment_id == segment_id)
    }

    /// Samples of one segment with their scores.
    pub fn segment_samples(&self, segment_id: u32) -> Vec<(ProjectedSample, Option<f64>)> {
        self.samples
            .iter()
            .zip(&self.scores)
            .filter(|(s, _)| s.segment_id == segment_id)
            .map(|(s, sc)| (*s, *sc))
            .collect()
    }
}

/// Threshold on the share of positive samples for a consistent verdict.
pub const CONSISTENT_FRACTION: f64 = 0.5;

/// Classifies the road samples of `scene` against `image`.
pub fn validate(scene: &Scene, image: &RgbImage, model: &SvmModel, spacing_px: f64) -> Result<Validation> {
    if !(spacing_px.is_finite() && spacing_px > 0.0) {
        return Err(Error::validation("spacing", "must be positive"));
    }
    let samples = sample_segments(scene, spacing_px);
    let scores = score_samples(image, model, &samples)?;
    let mut segments = Vec::with_capacity(scene.roads.segments.len());
    for seg in &scene.roads.segments {
        let mut r = SegmentReport {
            segment_id: seg.id,
            samples: 0,
            hidden: 0,
            scored: 0,
            positive: 0,
            verdict: Verdict::Unsampled,
        };
        for (s, score) in samples.iter().zip(&scores).filter(|(s, _)| s.segment_id == seg.id) {
            r.samples += 1;
            if !s.visible {
                r.hidden += 1;
            }
            if let Some(v) = score {
                r.scored += 1;
                if *v >= 0.0 {
                    r.positive += 1;
                }
            }
        }
        r.verdict = match r.positive_fraction() {
            Some(f) if f >= CONSISTENT_FRACTION => Verdict::Consistent,
            Some(_) => Verdict::Inconsistent,
            None if r.samples > 0 && r.hidden == r.samples => Verdict::Occluded,
            None => Verdict::Unsampled,
        };
        segments.push(r);
    }
    let samples = samples
        .into_iter()
        .zip(&scores)
        .map(|(s, sc)| ProjectedSample {
            label: match sc {
                Some(v) if *v >= 0.0 => Label::Consistent,
                Some(_) => Label::Inconsistent,
                None => Label::Unlabeled,
            },
            ..s
        })
        .collect();
    Ok(Validation { samples, scores, segments })
}

pub fn verdicts_to_string(reports: &[SegmentReport]) -> String {
    let mut s = format!("{VERDICTS_HEADER}\nsegment_id,samples,hidden,scored,positive,verdict\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.segment_id,
            r.samples,
            r.hidden,
            r.scored,
            r.positive,
            r.verdict.name()
        );
    }
    s
}

pub fn verdicts_from_str(text: &str, context: &str) -> Result<Vec<SegmentReport>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == VERDICTS_HEADER => {}
        _ => return Err(Error::parse(context, format!("missing `{VERDICTS_HEADER}` header"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with("segment_id") {
            continue;
        }
        let bad = || Error::parse(format!("{context}:{}", i + 1), "malformed verdict row");
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let n = |k: usize| f[k].parse::<usize>().map_err(|_| bad());
        out.push(SegmentReport {
            segment_id: f[0].parse().map_err(|_| bad())?,
            samples: n(1)?,
            hidden: n(2)?,
            scored: n(3)?,
            positive: n(4)?,
            verdict: Verdict::parse(f[5]).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

pub fn write_verdicts(path: impl AsRef<Path>, reports: &[SegmentReport]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, verdicts_to_string(reports)).map_err(|e| Error::io(path, e))
}

pub fn read_verdicts(path: impl AsRef<Path>) -> Result<Vec<SegmentReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    verdicts_from_str(&text, &path.display().to_string())
}

/// Draws each segment in its verdict color (consistent blue, inconsistent
/// red, occluded yellow, unsampled gray) with per-sample dots.
pub fn annotate_validation(image: &RgbImage, v: &Validation) -> RgbImage {
    let mut out = image.clone();
    for r in &v.segments {
        let color = match r.verdict {
            Verdict::Consistent => draw::BLUE,
            Verdict::Inconsistent => draw::RED,
            Verdict::Occluded => draw::YELLOW,
            Verdict::Unsampled => draw::GRAY,
        };
        let pts: Vec<_> = v
            .samples
            .iter()
            .filter(|s| s.segment_id == r.segment_id)
            .map(|s| s.px)
            .collect();
        draw::polyline(&mut out, &pts, 3.0, color);
    }
    for (s, score) in v.samples.iter().zip(&v.scores) {
        let color = match score {
            Some(x) if *x >= 0.0 => draw::BLUE,
            Some(_) => draw::RED,
            None => draw::GRAY,
        };
        draw::disc(&mut out, s.px, 3.5, draw::WHITE);
        draw::disc(&mut out, s.px, 2.5, color);
    }
    out
}
