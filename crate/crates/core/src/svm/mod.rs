//! Soft-margin kernel SVM: training, bias recovery, prediction and the
//! model file.

pub mod kernel;
mod smo;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptors::{ColorScaling, DescriptorParams};
use crate::error::{Error, Result};

pub use kernel::KernelSpec;

pub const MODEL_FORMAT: &str = "obval-model";
pub const MODEL_VERSION: u32 = 1;

/// Multipliers at or below this are dropped from the stored model.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Row-major feature matrix with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    data: Vec<f64>,
    labels: Vec<i8>,
}

impl TrainingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: &[i8]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.len() != labels.len() {
            return Err(Error::validation(
                "labels",
                format!("{} rows but {} labels", rows.len(), labels.len()),
            ));
        }
        let mut set = Self::new(dim);
        for (r, &l) in rows.iter().zip(labels) {
            set.push(r.as_ref(), l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, x: &[f64], label: i8) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::validation(
                "descriptor",
                format!("expected length {}, found {}", self.dim, x.len()),
            ));
        }
        if label != 1 && label != -1 {
            return Err(Error::validation("label", format!("{label} is not -1 or +1")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training descriptor"));
        }
        self.data.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l > 0).count();
        (pos, self.labels.len() - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub kernel: KernelSpec,
    /// Upper bound on every multiplier.
    pub box_c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Training sets up to this size get a precomputed kernel matrix.
    pub full_gram_limit: usize,
    /// Kernel rows kept when the matrix is not precomputed.
    pub cache_rows: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::RbfGaussian { sigma: 0.8 },
            box_c: 1.0,
            tol: 1e-3,
            max_iter: 10_000_000,
            full_gram_limit: 20_000,
            cache_rows: 2_000,
        }
    }
}

impl TrainParams {
    pub fn with_kernel(kernel: KernelSpec) -> Self {
        Self {
            kernel,
            ..Self::default()
        }
    }
}

/// Trained classifier. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub box_c: f64,
    pub bias: f64,
    pub dim: usize,
    pub color_scaling: ColorScaling,
    pub descriptor: DescriptorParams,
    /// Multiplier of each stored support vector.
    pub multipliers: Vec<f64>,
    pub labels: Vec<i8>,
    /// Row-major support vectors.
    pub vectors: Vec<f64>,
    /// Solver iterations used (not persisted).
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
    /// +1 or -1; a zero score maps to +1.
    pub class: i8,
}

pub fn train(data: &TrainingSet, params: &TrainParams) -> Result<SvmModel> {
    params.kernel.validate()?;
    if !(params.box_c.is_finite() && params.box_c > 0.0) {
        return Err(Error::validation("box_c", "must be positive and finite"));
    }
    if !(params.tol.is_finite() && params.tol > 0.0) {
        return Err(Error::validation("tol", "must be positive and finite"));
    }
    let (pos, neg) = data.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let y: Vec<f64> = data.labels.iter().map(|&l| l as f64).collect();
    let mut gram = smo::Gram::new(
        params.kernel,
        &data.data,
        data.dim,
        params.full_gram_limit,
        params.cache_rows,
    );
    let sol = smo::solve(&mut gram, &y, params.box_c, params.tol, params.max_iter)?;
    let mut model = SvmModel {
        kernel: params.kernel,
        box_c: params.box_c,
        bias: sol.bias,
        dim: data.dim,
        color_scaling: ColorScaling::default(),
        descriptor: DescriptorParams::default(),
        multipliers: Vec::new(),
        labels: Vec::new(),
        vectors: Vec::new(),
        iterations: sol.iterations,
    };
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > SUPPORT_THRESHOLD {
            model.multipliers.push(a);
            model.labels.push(data.labels[i]);
            model.vectors.extend_from_slice(data.row(i));
        }
    }
    Ok(model)
}

impl SvmModel {
    pub fn support_count(&self) -> usize {
        self.multipliers.len()
    }

    pub fn support_vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Decision value without input checks.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for k in 0..self.multipliers.len() {
            let coef = self.multipliers[k] * self.labels[k] as f64;
            sum += coef * self.kernel.eval(x, self.support_vector(k));
        }
        sum + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim {
            return Err(Error::validation(
                "descriptor",
                format!("expected length {}, found {}", self.dim, x.len()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor"));
        }
        let score = self.score(x);
        Ok(Prediction {
            score,
            class: if score >= 0.0 { 1 } else { -1 },
        })
    }

    /// Sum of multiplier times label over stored vectors.
    pub fn equality_residual(&self) -> f64 {
        self.multipliers
            .iter()
            .zip(&self.labels)
            .map(|(a, &l)| a * l as f64)
            .sum()
    }

    pub fn to_json_string(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kernel: self.kernel,
            box_c: self.box_c,
            bias: self.bias,
            dim: self.dim,
            color_scaling: self.color_scaling,
            descriptor: self.descriptor,
            support_vectors: (0..self.support_count())
                .map(|k| SupportDoc {
                    lambda: self.multipliers[k],
                    label: self.labels[k],
                    x: self.support_vector(k).to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::parse(context, format!("format `{}` is not `{MODEL_FORMAT}`", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::parse(context, format!("unsupported model version {}", doc.version)));
        }
        doc.kernel.validate()?;
        let mut model = SvmModel {
            kernel: doc.kernel,
            box_c: doc.box_c,
            bias: doc.bias,
            dim: doc.dim,
            color_scaling: doc.color_scaling,
            descriptor: doc.descriptor,
            multipliers: Vec::with_capacity(doc.support_vectors.len()),
            labels: Vec::with_capacity(doc.support_vectors.len()),
            vectors: Vec::with_capacity(doc.support_vectors.len() * doc.dim),
            iterations: 0,
        };
        for (k, sv) in doc.support_vectors.into_iter().enumerate() {
            if sv.x.len() != doc.dim {
                return Err(Error::parse(context, format!("support vector {k} has length {}", sv.x.len())));
            }
            if !(sv.lambda > 0.0 && sv.lambda <= doc.box_c) || (sv.label != 1 && sv.label != -1) {
                return Err(Error::parse(context, format!("support vector {k} has invalid multiplier or label")));
            }
            model.multipliers.push(sv.lambda);
            model.labels.push(sv.label);
            model.vectors.extend(sv.x);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    kernel: KernelSpec,
    box_c: f64,
    bias: f64,
    dim: usize,
    color_scaling: ColorScaling,
    descriptor: DescriptorParams,
    support_vectors: Vec<SupportDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportDoc {
    lambda: f64,
    label: i8,
    x: Vec<f64>,
}
