use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel function and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Linear,
    /// tanh(scale * <a, b> + offset)
    Sigmoid { scale: f64, offset: f64 },
    /// <a, b>^degree
    Polynomial { degree: u32 },
    /// Mean over dimensions of exp(-(a_k - b_k)^2 / (2 sigma^2)).
    RbfGaussian { sigma: f64 },
    /// exp(-|a - b| / (2 sigma^2))
    RbfExponential { sigma: f64 },
    /// exp(-|a - b|^2 / (2 sigma^2))
    RbfIsotropic { sigma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Sigmoid { scale, offset } => {
                if scale.is_finite() && offset.is_finite() {
                    Ok(())
                } else {
                    Err(Error::validation("kernel", "sigmoid scale and offset must be finite"))
                }
            }
            KernelSpec::Polynomial { degree } => {
                if degree >= 1 {
                    Ok(())
                } else {
                    Err(Error::validation("kernel", "polynomial degree must be at least 1"))
                }
            }
            KernelSpec::RbfGaussian { sigma }
            | KernelSpec::RbfExponential { sigma }
            | KernelSpec::RbfIsotropic { sigma } => {
                if sigma.is_finite() && sigma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::validation("kernel", "sigma must be positive and finite"))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Sigmoid { .. } => "sigmoid",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::RbfGaussian { .. } => "rbf_gaussian",
            KernelSpec::RbfExponential { .. } => "rbf_exponential",
            KernelSpec::RbfIsotropic { .. } => "rbf_isotropic",
        }
    }

    /// Evaluates the kernel without input checks. Slices must have equal
    /// length.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Sigmoid { scale, offset } => (scale * dot(a, b) + offset).tanh(),
            KernelSpec::Polynomial { degree } => dot(a, b).powi(degree as i32),
            KernelSpec::RbfGaussian { sigma } => {
                let g = -1.0 / (2.0 * sigma * sigma);
                let sum: f64 = a.iter().zip(b).map(|(x, y)| (g * (x - y) * (x - y)).exp()).sum();
                sum / a.len() as f64
            }
            KernelSpec::RbfExponential { sigma } => {
                (-sq_dist(a, b).sqrt() / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::RbfIsotropic { sigma } => (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp(),
        }
    }

    /// Checked evaluation.
    pub fn try_eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::validation(
                "kernel input",
                format!("length mismatch: {} vs {}", a.len(), b.len()),
            ));
        }
        if a.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel input"));
        }
        Ok(self.eval(a, b))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
