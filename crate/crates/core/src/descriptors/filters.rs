//! Shape families computed on bias-gain normalized luminance: oriented
//! gradient, steerable quadrature pair, Hessian eigenvalues and
//! difference-of-Gaussians.

use crate::geom::Vec2;

/// Square grid of luminance values, row-major, side `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Luma {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Luma {
    pub fn new(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "luma grid must be {n}x{n}");
        Self { n, values }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                values.push(f(row, col));
            }
        }
        Self { n, values }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// Index of the patch center pixel.
    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Subtracts the mean and divides by the population standard deviation.
    /// A (numerically) constant grid normalizes to all zeros.
    pub fn bias_gain_normalized(&self) -> Luma {
        let count = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / count;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        let values = if std > 1e-9 * (1.0 + mean.abs()) {
            self.values.iter().map(|v| (v - mean) / std).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Luma { n: self.n, values }
    }
}

/// `[|r| - r, |r| + r]`: one of the pair is always zero.
#[inline]
pub fn rectify(r: f64) -> [f64; 2] {
    [r.abs() - r, r.abs() + r]
}

/// Mean central-difference gradient over the interior, projected onto the
/// primary and normal directions and sign-rectified.
pub fn gradient_family(l: &Luma, primary: Vec2, normal: Vec2) -> [f64; 4] {
    let n = l.n;
    let (mut gx, mut gy) = (0.0, 0.0);
    for row in 1..n - 1 {
        for col in 1..n - 1 {
            gx += 0.5 * (l.at(row, col + 1) - l.at(row, col - 1));
            gy += 0.5 * (l.at(row + 1, col) - l.at(row - 1, col));
        }
    }
    let count = ((n - 2) * (n - 2)) as f64;
    let g = Vec2::new(gx / count, gy / count);
    let [a, b] = rectify(g.dot(primary));
    let [c, d] = rectify(g.dot(normal));
    [a, b, c, d]
}

/// Hessian eigenvalues at the patch center (second central differences),
/// descending.
pub fn hessian_family(l: &Luma) -> [f64; 2] {
    let c = l.center();
    let lxx = l.at(c, c + 1) - 2.0 * l.at(c, c) + l.at(c, c - 1);
    let lyy = l.at(c + 1, c) - 2.0 * l.at(c, c) + l.at(c - 1, c);
    let lxy = 0.25
        * (l.at(c + 1, c + 1) - l.at(c + 1, c - 1) - l.at(c - 1, c + 1) + l.at(c - 1, c - 1));
    symmetric_eigenvalues(lxx, lxy, lyy)
}

/// Eigenvalues of [[a, b], [b, d]], larger first.
pub fn symmetric_eigenvalues(a: f64, b: f64, d: f64) -> [f64; 2] {
    let mean = 0.5 * (a + d);
    let radius = (0.5 * (a - d)).hypot(b);
    [mean + radius, mean - radius]
}

// Freeman-Adelson G2/H2 basis gains; the H2 cross term is a third of the
// cubic term, which keeps the four-function basis exactly steerable.
const G2_GAIN: f64 = 0.9213;
const H2_GAIN: f64 = 0.9780;
const H2_LINEAR: f64 = 2.254;
const H2_CROSS: f64 = H2_LINEAR / 3.0;

/// Basis kernels sampled over the patch grid, centered at the patch center.
#[derive(Debug, Clone)]
pub struct SteerableBank {
    n: usize,
    g2: [Vec<f64>; 3],
    h2: [Vec<f64>; 4],
}

impl SteerableBank {
    /// `sigma_px` is the standard deviation of the Gaussian envelope.
    pub fn new(n: usize, sigma_px: f64) -> Self {
        let c = (n / 2) as f64;
        let scale = 1.0 / (std::f64::consts::SQRT_2 * sigma_px);
        let mut g2 = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        let mut h2 = [
            vec![0.0; n * n],
            vec![0.0; n * n],
            vec![0.0; n * n],
            vec![0.0; n * n],
        ];
        for row in 0..n {
            for col in 0..n {
                let x = (col as f64 - c) * scale;
                let y = (row as f64 - c) * scale;
                let e = (-(x * x + y * y)).exp();
                let i = row * n + col;
                g2[0][i] = G2_GAIN * (2.0 * x * x - 1.0) * e;
                g2[1][i] = 2.0 * G2_GAIN * x * y * e;
                g2[2][i] = G2_GAIN * (2.0 * y * y - 1.0) * e;
                h2[0][i] = H2_GAIN * (x * x * x - H2_LINEAR * x) * e;
                h2[1][i] = H2_GAIN * (x * x - H2_CROSS) * y * e;
                h2[2][i] = H2_GAIN * (y * y - H2_CROSS) * x * e;
                h2[3][i] = H2_GAIN * (y * y * y - H2_LINEAR * y) * e;
            }
        }
        Self { n, g2, h2 }
    }

    /// (G2, H2) responses at the patch center for the orientation given by
    /// the unit vector `dir` = (cos t, sin t).
    pub fn respond(&self, l: &Luma, dir: Vec2) -> (f64, f64) {
        assert_eq!(l.n, self.n);
        let dot = |k: &[f64]| k.iter().zip(&l.values).map(|(a, b)| a * b).sum::<f64>();
        let g = self.g2.each_ref().map(|k| dot(k));
        let h = self.h2.each_ref().map(|k| dot(k));
        let (c, s) = (dir.x, dir.y);
        let g2 = c * c * g[0] + 2.0 * c * s * g[1] + s * s * g[2];
        let h2 = c * c * c * h[0] + 3.0 * c * c * s * h[1] + 3.0 * c * s * s * h[2] + s * s * s * h[3];
        (g2, h2)
    }

    /// Two quadrature magnitudes (primary, normal) then the rectified raw
    /// responses G2(p), H2(p), G2(n), H2(n).
    pub fn family(&self, l: &Luma, primary: Vec2, normal: Vec2) -> [f64; 10] {
        let (gp, hp) = self.respond(l, primary);
        let (gn, hn) = self.respond(l, normal);
        let mut out = [0.0; 10];
        out[0] = gp.hypot(hp);
        out[1] = gn.hypot(hn);
        for (i, r) in [gp, hp, gn, hn].into_iter().enumerate() {
            out[2 + 2 * i..4 + 2 * i].copy_from_slice(&rectify(r));
        }
        out
    }
}

/// Normalized 2-D Gaussian weights centered at the patch center, truncated
/// at `truncate * sigma` and at the patch border.
pub fn centered_gaussian(n: usize, sigma: f64, truncate: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let radius = (truncate * sigma).ceil();
    let mut w = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let (dx, dy) = (col as f64 - c, row as f64 - c);
            if dx.abs() <= radius && dy.abs() <= radius {
                w[row * n + col] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Difference-of-Gaussians at the patch center on an already smoothed
/// patch: D1 = G(s1) * L - L, D2 = G(s2) * L - G(s1) * L.
#[derive(Debug, Clone)]
pub struct DogBank {
    wide: Vec<f64>,
    wider: Vec<f64>,
}

impl DogBank {
    pub fn new(n: usize, sigma1: f64, sigma2: f64, truncate: f64) -> Self {
        Self {
            wide: centered_gaussian(n, sigma1, truncate),
            wider: centered_gaussian(n, sigma2, truncate),
        }
    }

    pub fn responses(&self, l: &Luma) -> (f64, f64) {
        let dot = |k: &[f64]| k.iter().zip(&l.values).map(|(a, b)| a * b).sum::<f64>();
        let c = l.center();
        let s0 = l.at(c, c);
        let s1 = dot(&self.wide);
        let s2 = dot(&self.wider);
        (s1 - s0, s2 - s1)
    }

    pub fn family(&self, l: &Luma) -> [f64; 4] {
        let (d1, d2) = self.responses(l);
        let [a, b] = rectify(d1);
        let [c, d] = rectify(d2);
        [a, b, c, d]
    }
}
