//! Confusion metrics, ROC analysis and the repeated random-split protocol.

pub mod plot;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts with `score >= threshold` predicted positive.
    pub fn at_threshold(scored: &[(f64, i8)], threshold: f64) -> Self {
        let mut c = Self::default();
        for &(s, truth) in scored {
            match (s >= threshold, truth > 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: ConfusionCounts) -> Metrics {
    Metrics {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Scores at or above this are called positive. The first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweeps thresholds over the distinct scores in descending order. Tied
/// scores move together, producing a diagonal step.
pub fn roc(scored: &[(f64, i8)]) -> Result<RocCurve> {
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite("score"));
    }
    let pos = scored.iter().filter(|(_, t)| *t > 0).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut sorted: Vec<(f64, i8)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum();
    Ok(RocCurve { points, auc })
}

impl RocCurve {
    /// (fpr, tpr) when `score >= threshold` is called positive.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        // points are ordered by descending threshold; take the last one
        // whose threshold is still >= the query
        let mut best = self.points[0];
        for p in &self.points {
            if p.threshold >= threshold {
                best = *p;
            } else {
                break;
            }
        }
        (best.fpr, best.tpr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# obval-roc v1\nthreshold,fpr,tpr\n");
        for p in &self.points {
            writeln!(s, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Held-out and training indices of one split, per class, each sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub index: usize,
    pub train_pos: Vec<usize>,
    pub test_pos: Vec<usize>,
    pub train_neg: Vec<usize>,
    pub test_neg: Vec<usize>,
}

fn partition(rng: &mut ChaCha8Rng, n: usize, n_test: usize) -> (Vec<usize>, Vec<usize>) {
    let mut test = rand::seq::index::sample(rng, n, n_test).into_vec();
    test.sort_unstable();
    let mut in_test = vec![false; n];
    test.iter().for_each(|&i| in_test[i] = true);
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    (train, test)
}

/// `n_splits` random partitions holding out `n_test` items per class. Split
/// `k` draws from its own stream of a generator seeded with `seed`, so any
/// split can be reproduced on its own.
pub fn split_protocol(
    n_pos: usize,
    n_neg: usize,
    n_test: usize,
    n_splits: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    for have in [n_pos, n_neg] {
        if have <= n_test {
            return Err(Error::ClassTooSmall { have, need: n_test });
        }
    }
    Ok((0..n_splits)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let (train_pos, test_pos) = partition(&mut rng, n_pos, n_test);
            let (train_neg, test_neg) = partition(&mut rng, n_neg, n_test);
            Split {
                index,
                train_pos,
                test_pos,
                train_neg,
                test_neg,
            }
        })
        .collect())
}

/// Evaluates every split in parallel; results come back in split order.
pub fn run_splits<T: Send>(
    splits: &[Split],
    f: impl Fn(&Split) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    splits.par_iter().map(f).collect()
}

/// Mean and population standard deviation; `None` for an empty input.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Reads `score,truth` rows. Lines starting with `#` and a `score,truth`
/// header are skipped.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(f64, i8)>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("score") {
            continue;
        }
        let err = |m: String| Error::parse(format!("{ctx}:{}", n + 1), m);
        let (s, t) = line
            .split_once(',')
            .ok_or_else(|| err("expected `score,truth`".into()))?;
        let score: f64 = s.trim().parse().map_err(|e| err(format!("score: {e}")))?;
        let truth: i8 = t.trim().parse().map_err(|e| err(format!("truth: {e}")))?;
        if truth != 1 && truth != -1 {
            return Err(err(format!("truth {truth} is not -1 or +1")));
        }
        out.push((score, truth));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no scores in {ctx}")));
    }
    Ok(out)
}

pub fn write_scores(path: impl AsRef<Path>, scored: &[(f64, i8)]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("# obval-scores v1\nscore,truth\n");
    for (score, truth) in scored {
        writeln!(s, "{score:?},{truth}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
