//! Pairwise coordinate solver for the soft-margin dual
//!
//!   min 1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij
//!
//! using the maximal violating pair as working set.

use std::collections::HashMap;

use rayon::prelude::*;

use super::kernel::KernelSpec;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

/// Kernel matrix access: full precomputed matrix or a bounded row cache.
pub(crate) enum Gram<'a> {
    Full {
        n: usize,
        values: Vec<f64>,
    },
    Rows {
        kernel: KernelSpec,
        data: &'a [f64],
        dim: usize,
        n: usize,
        capacity: usize,
        rows: HashMap<usize, (Vec<f64>, u64)>,
        clock: u64,
    },
}

impl<'a> Gram<'a> {
    pub(crate) fn new(
        kernel: KernelSpec,
        data: &'a [f64],
        dim: usize,
        full_limit: usize,
        cache_rows: usize,
    ) -> Self {
        let n = data.len() / dim;
        if n <= full_limit {
            let mut values = vec![0.0; n * n];
            // upper triangle in parallel, then mirror
            values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let xi = &data[i * dim..(i + 1) * dim];
                for (j, slot) in row.iter_mut().enumerate().skip(i) {
                    *slot = kernel.eval(xi, &data[j * dim..(j + 1) * dim]);
                }
            });
            for i in 0..n {
                for j in 0..i {
                    values[i * n + j] = values[j * n + i];
                }
            }
            Gram::Full { n, values }
        } else {
            Gram::Rows {
                kernel,
                data,
                dim,
                n,
                capacity: cache_rows.max(2),
                rows: HashMap::new(),
                clock: 0,
            }
        }
    }

    fn diagonal(&self, i: usize) -> f64 {
        match self {
            Gram::Full { n, values } => values[i * n + i],
            Gram::Rows { kernel, data, dim, .. } => {
                let x = &data[i * dim..(i + 1) * dim];
                kernel.eval(x, x)
            }
        }
    }

    fn ensure(&mut self, i: usize) {
        if let Gram::Rows { kernel, data, dim, n, capacity, rows, clock } = self {
            *clock += 1;
            if let Some(entry) = rows.get_mut(&i) {
                entry.1 = *clock;
                return;
            }
            if rows.len() >= *capacity {
                let oldest = rows.iter().min_by_key(|(_, (_, t))| *t).map(|(k, _)| *k);
                if let Some(k) = oldest {
                    rows.remove(&k);
                }
            }
            let (kernel, dim) = (*kernel, *dim);
            let xi = &data[i * dim..(i + 1) * dim];
            let row: Vec<f64> = (0..*n)
                .into_par_iter()
                .map(|j| kernel.eval(xi, &data[j * dim..(j + 1) * dim]))
                .collect();
            rows.insert(i, (row, *clock));
        }
    }

    /// Runs `f` with kernel rows `i` and `j`.
    fn with_rows<R>(&mut self, i: usize, j: usize, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
        self.ensure(i);
        self.ensure(j);
        match self {
            Gram::Full { n, values } => f(&values[i * *n..(i + 1) * *n], &values[j * *n..(j + 1) * *n]),
            Gram::Rows { rows, .. } => f(&rows[&i].0, &rows[&j].0),
        }
    }
}

pub(crate) struct Solution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

/// Index sets and extremes of -y_t G_t used for pair selection and stopping.
fn violating_pair(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> (Option<usize>, f64, Option<usize>, f64) {
    let mut up = (None, f64::NEG_INFINITY);
    let mut low = (None, f64::INFINITY);
    for t in 0..alpha.len() {
        let v = -y[t] * grad[t];
        let in_up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
        let in_low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
        if in_up && v > up.1 {
            up = (Some(t), v);
        }
        if in_low && v < low.1 {
            low = (Some(t), v);
        }
    }
    (up.0, up.1, low.0, low.1)
}

pub(crate) fn solve(
    gram: &mut Gram,
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Solution> {
    let n = y.len();
    let diag: Vec<f64> = (0..n).map(|i| gram.diagonal(i)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0usize;
    loop {
        let (i, m_up, j, m_low) = violating_pair(&alpha, &grad, y, c);
        let (Some(i), Some(j)) = (i, j) else { break };
        if m_up - m_low <= tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                worst_violation: m_up - m_low,
            });
        }
        iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        gram.with_rows(i, j, |ki, kj| {
            let kij = ki[j];
            let (yi, yj) = (y[i], y[j]);
            if yi != yj {
                let quad = positive(diag[i] + diag[j] + 2.0 * kij * yi * yj);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = positive(diag[i] + diag[j] - 2.0 * kij * yi * yj);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = ((alpha[i] - old_i) * yi, (alpha[j] - old_j) * yj);
            for (k, g) in grad.iter_mut().enumerate() {
                *g += y[k] * (ki[k] * di + kj[k] * dj);
            }
        });
    }
    let bias = recover_bias(&alpha, &grad, y, c);
    Ok(Solution {
        alpha,
        bias,
        iterations,
    })
}

fn positive(q: f64) -> f64 {
    if q > 0.0 {
        q
    } else {
        TAU
    }
}

/// Average of -y_k G_k over free multipliers; midpoint of the feasible
/// interval when every multiplier sits at a bound.
fn recover_bias(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..alpha.len() {
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += -y[t] * grad[t];
            count += 1;
        }
    }
    if count > 0 {
        return sum / count as f64;
    }
    let (_, m_up, _, m_low) = violating_pair(alpha, grad, y, c);
    match (m_up.is_finite(), m_low.is_finite()) {
        (true, true) => 0.5 * (m_up + m_low),
        (true, false) => m_up,
        (false, true) => m_low,
        (false, false) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_cache_matches_full_matrix() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let k = KernelSpec::RbfIsotropic { sigma: 0.5 };
        let mut full = Gram::new(k, &data, 2, 100, 0);
        let mut rows = Gram::new(k, &data, 2, 0, 3);
        for (i, j) in [(0, 1), (5, 7), (19, 0), (5, 6), (1, 1)] {
            let a = full.with_rows(i, j, |a, b| (a.to_vec(), b.to_vec()));
            let b = rows.with_rows(i, j, |a, b| (a.to_vec(), b.to_vec()));
            assert_eq!(a, b);
        }
    }
}
