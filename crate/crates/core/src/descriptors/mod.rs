//! The 29-component composite descriptor computed from a square image patch
//! around each projected road sample.
//!
//! Layout (see `docs/descriptor_layout.md`):
//! color moments (9), rectified gradient (4), steerable pair (10),
//! Hessian eigenvalues (2), rectified difference-of-Gaussians (4).

pub mod color;
pub mod dump;
pub mod filters;

use std::ops::Range;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::projection::ProjectedSample;

pub use color::ColorCenter;
use filters::{DogBank, Luma, SteerableBank};

pub const DESCRIPTOR_LEN: usize = 29;

pub const COLOR: Range<usize> = 0..9;
pub const GRAD: Range<usize> = 9..13;
pub const STEER: Range<usize> = 13..23;
pub const HESSIAN: Range<usize> = 23..25;
pub const DOG: Range<usize> = 25..29;

/// Family name and index range of each block, in concatenation order.
pub const LAYOUT: [(&str, Range<usize>); 5] = [
    ("color", COLOR),
    ("grad", GRAD),
    ("steer", STEER),
    ("hessian", HESSIAN),
    ("dog", DOG),
];

/// Name of every component, index-aligned with the descriptor vector.
pub fn component_names() -> Vec<String> {
    let mut names = Vec::with_capacity(DESCRIPTOR_LEN);
    for ch in ["L", "u", "v"] {
        for stat in ["center", "std", "skew"] {
            names.push(format!("color.{ch}.{stat}"));
        }
    }
    for dir in ["primary", "normal"] {
        for side in ["neg", "pos"] {
            names.push(format!("grad.{dir}.{side}"));
        }
    }
    names.push("steer.primary.magnitude".into());
    names.push("steer.normal.magnitude".into());
    for dir in ["primary", "normal"] {
        for filt in ["g2", "h2"] {
            for side in ["neg", "pos"] {
                names.push(format!("steer.{dir}.{filt}.{side}"));
            }
        }
    }
    names.push("hessian.major".into());
    names.push("hessian.minor".into());
    for scale in ["fine", "coarse"] {
        for side in ["neg", "pos"] {
            names.push(format!("dog.{scale}.{side}"));
        }
    }
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorParams {
    /// Pre-smoothing standard deviation in pixels.
    pub sigma_s: f64,
    /// Patch side in pixels.
    pub patch_size: usize,
    /// Ratio between successive DoG scales.
    pub dog_ratio: f64,
    #[serde(default)]
    pub color_center: ColorCenter,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            sigma_s: 2.8,
            patch_size: 24,
            dog_ratio: 1.6,
            color_center: ColorCenter::Median,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s.is_finite() && self.sigma_s > 0.0) {
            return Err(Error::validation("sigma_s", "must be positive and finite"));
        }
        if self.patch_size < 5 {
            return Err(Error::validation("patch_size", "must be at least 5"));
        }
        if !(self.dog_ratio.is_finite() && self.dog_ratio > 1.0) {
            return Err(Error::validation("dog_ratio", "must exceed 1"));
        }
        Ok(())
    }

    /// Smoothing kernel radius: ceil(3 sigma).
    pub fn apron(&self) -> usize {
        (3.0 * self.sigma_s).ceil() as usize
    }

    /// Whether the window around the pixel nearest `center`, plus apron,
    /// lies inside a `width` x `height` image.
    pub fn fits(&self, width: u32, height: u32, center: Vec2) -> bool {
        if !center.is_finite() {
            return false;
        }
        let n = self.patch_size as i64;
        let r = self.apron() as i64;
        let (u0, v0) = (center.x.round() as i64 - n / 2, center.y.round() as i64 - n / 2);
        u0 - r >= 0 && v0 - r >= 0 && u0 + n - 1 + r < width as i64 && v0 + n - 1 + r < height as i64
    }
}

/// Smoothed square window of RGB values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<[f64; 3]>,
    /// Integer pixel the window is centered on.
    pub center_px: (u32, u32),
    pub primary_dir: Vec2,
    pub normal_dir: Vec2,
}

impl Patch {
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.size + col]
    }
}

/// Raw family values of one patch, before color scaling and normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Families {
    pub color: [f64; 9],
    pub grad: [f64; 4],
    pub steer: [f64; 10],
    pub hessian: [f64; 2],
    pub dog: [f64; 4],
}

impl Families {
    pub fn concat(&self) -> [f64; DESCRIPTOR_LEN] {
        let mut out = [0.0; DESCRIPTOR_LEN];
        out[COLOR].copy_from_slice(&self.color);
        out[GRAD].copy_from_slice(&self.grad);
        out[STEER].copy_from_slice(&self.steer);
        out[HESSIAN].copy_from_slice(&self.hessian);
        out[DOG].copy_from_slice(&self.dog);
        out
    }
}

/// Per-dimension divisors for the color block, fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorScaling {
    pub std: [f64; 9],
}

impl Default for ColorScaling {
    fn default() -> Self {
        Self { std: [1.0; 9] }
    }
}

impl ColorScaling {
    /// Population standard deviation of each color dimension over `raw`.
    /// Dimensions with (near) zero spread keep a divisor of 1.
    pub fn fit<'a>(raw: impl IntoIterator<Item = &'a [f64; DESCRIPTOR_LEN]>) -> Self {
        let mut sum = [0.0; 9];
        let mut sum_sq = [0.0; 9];
        let mut n = 0usize;
        for d in raw {
            for k in 0..9 {
                sum[k] += d[k];
                sum_sq[k] += d[k] * d[k];
            }
            n += 1;
        }
        let mut std = [1.0; 9];
        if n > 0 {
            for k in 0..9 {
                let mean = sum[k] / n as f64;
                let var = (sum_sq[k] / n as f64 - mean * mean).max(0.0);
                if var.sqrt() > 1e-12 {
                    std[k] = var.sqrt();
                }
            }
        }
        Self { std }
    }

    pub fn apply(&self, raw: &[f64; DESCRIPTOR_LEN]) -> [f64; DESCRIPTOR_LEN] {
        let mut out = *raw;
        for (v, s) in out[..9].iter_mut().zip(&self.std) {
            *v /= s;
        }
        out
    }
}

/// Final unit-length descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    pub values: [f64; DESCRIPTOR_LEN],
    /// Set when every component was zero; `values` is then all zeros.
    pub degenerate: bool,
}

/// Scales the color block, then L2-normalizes the whole vector.
pub fn compose(raw: &[f64; DESCRIPTOR_LEN], scaling: &ColorScaling) -> Result<Descriptor> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("descriptor"));
    }
    let mut values = scaling.apply(raw);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(Descriptor {
            values,
            degenerate: true,
        });
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("descriptor norm"));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(Descriptor {
        values,
        degenerate: false,
    })
}

/// Normalized 1-D Gaussian taps for offsets -radius..=radius.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Reusable kernels and filter banks for one parameter set.
#[derive(Debug, Clone)]
pub struct DescriptorExtractor {
    params: DescriptorParams,
    taps: Vec<f64>,
    steer: SteerableBank,
    dog: DogBank,
}

impl DescriptorExtractor {
    pub fn new(params: DescriptorParams) -> Result<Self> {
        params.validate()?;
        let n = params.patch_size;
        let s = params.sigma_s;
        let s1 = params.dog_ratio * s;
        let s2 = params.dog_ratio * s1;
        // the patch is already blurred by sigma_s; the extra blur that brings
        // it to sigma_1 / sigma_2 composes in quadrature
        let extra1 = (s1 * s1 - s * s).sqrt();
        let extra2 = (s2 * s2 - s * s).sqrt();
        Ok(Self {
            params,
            taps: gaussian_taps(s, params.apron()),
            steer: SteerableBank::new(n, s),
            dog: DogBank::new(n, extra1, extra2, 3.0),
        })
    }

    pub fn params(&self) -> &DescriptorParams {
        &self.params
    }

    /// Smoothed window centered on the nearest pixel to `center`, or `None`
    /// when the window plus smoothing apron leaves the image.
    pub fn extract_patch(
        &self,
        image: &RgbImage,
        center: Vec2,
        primary_dir: Vec2,
        normal_dir: Vec2,
    ) -> Option<Patch> {
        if !self.params.fits(image.width(), image.height(), center) {
            return None;
        }
        let n = self.params.patch_size as i64;
        let r = self.params.apron() as i64;
        let (cu, cv) = (center.x.round() as i64, center.y.round() as i64);
        let (u0, v0) = (cu - n / 2, cv - n / 2);
        let span = (n + 2 * r) as usize;
        let n = n as usize;
        // horizontal pass over the window rows plus vertical apron
        let mut horiz = vec![[0.0f64; 3]; span * n];
        for (row, y) in (v0 - r..v0 + n as i64 + r).enumerate() {
            for col in 0..n {
                let mut acc = [0.0; 3];
                let x0 = u0 + col as i64 - r;
                for (k, t) in self.taps.iter().enumerate() {
                    let p = image.get_pixel((x0 + k as i64) as u32, y as u32).0;
                    for c in 0..3 {
                        acc[c] += t * p[c] as f64;
                    }
                }
                horiz[row * n + col] = acc;
            }
        }
        let mut pixels = vec![[0.0f64; 3]; n * n];
        for row in 0..n {
            for col in 0..n {
                let mut acc = [0.0; 3];
                for (k, t) in self.taps.iter().enumerate() {
                    let p = horiz[(row + k) * n + col];
                    for c in 0..3 {
                        acc[c] += t * p[c];
                    }
                }
                pixels[row * n + col] = acc.map(|v| v / 255.0);
            }
        }
        Some(Patch {
            size: n,
            pixels,
            center_px: (cu as u32, cv as u32),
            primary_dir,
            normal_dir,
        })
    }

    pub fn families(&self, patch: &Patch) -> Families {
        let luv: Vec<[f64; 3]> = patch.pixels.iter().map(|p| color::srgb_to_luv(*p)).collect();
        let color = color::channel_moments(&luv, self.params.color_center);
        let luma = Luma::new(patch.size, luv.iter().map(|p| p[0]).collect()).bias_gain_normalized();
        self.shape_families(&luma, patch.primary_dir, patch.normal_dir, color)
    }

    /// Shape families of an already normalized luminance grid.
    pub fn shape_families(&self, luma: &Luma, primary: Vec2, normal: Vec2, color: [f64; 9]) -> Families {
        Families {
            color,
            grad: filters::gradient_family(luma, primary, normal),
            steer: self.steer.family(luma, primary, normal),
            hessian: filters::hessian_family(luma),
            dog: self.dog.family(luma),
        }
    }

    /// Unscaled, unnormalized descriptor of a sample, `None` if the patch
    /// does not fit in the image.
    pub fn raw(&self, image: &RgbImage, sample: &ProjectedSample) -> Option<[f64; DESCRIPTOR_LEN]> {
        let patch = self.extract_patch(image, sample.px, sample.primary_dir, sample.normal_dir)?;
        Some(self.families(&patch).concat())
    }

    pub fn describe(
        &self,
        image: &RgbImage,
        sample: &ProjectedSample,
        scaling: &ColorScaling,
    ) -> Option<Result<Descriptor>> {
        self.raw(image, sample).map(|raw| compose(&raw, scaling))
    }
}

/// One-shot patch extraction with the given parameters.
pub fn extract_patch(image: &RgbImage, sample: &ProjectedSample, params: DescriptorParams) -> Result<Option<Patch>> {
    let ex = DescriptorExtractor::new(params)?;
    Ok(ex.extract_patch(image, sample.px, sample.primary_dir, sample.normal_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn extractor() -> DescriptorExtractor {
        DescriptorExtractor::new(DescriptorParams::default()).unwrap()
    }

    const EAST: Vec2 = Vec2::new(1.0, 0.0);
    const SOUTH: Vec2 = Vec2::new(0.0, 1.0);

    fn constant_patch(rgb: [f64; 3]) -> Patch {
        Patch {
            size: 24,
            pixels: vec![rgb; 576],
            center_px: (100, 100),
            primary_dir: EAST,
            normal_dir: SOUTH,
        }
    }

    fn patch_from_luma(f: impl Fn(f64, f64) -> f64, primary: Vec2, normal: Vec2) -> Patch {
        let mut pixels = Vec::with_capacity(576);
        for r in 0..24 {
            for c in 0..24 {
                let g = f(c as f64 - 12.0, r as f64 - 12.0).clamp(0.0, 1.0);
                pixels.push([g, g, g]);
            }
        }
        Patch {
            size: 24,
            pixels,
            center_px: (100, 100),
            primary_dir: primary,
            normal_dir: normal,
        }
    }

    #[test]
    fn constant_white_image_gives_constant_patch() {
        let img = RgbImage::from_pixel(100, 100, Rgb([255, 255, 255]));
        let p = extractor()
            .extract_patch(&img, Vec2::new(50.0, 50.0), EAST, SOUTH)
            .unwrap();
        for px in &p.pixels {
            for c in px {
                assert!((c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_matches_direct_gaussian() {
        let mut img = RgbImage::from_pixel(100, 100, Rgb([0, 0, 0]));
        img.put_pixel(50, 50, Rgb([255, 255, 255]));
        let p = extractor()
            .extract_patch(&img, Vec2::new(50.2, 49.7), EAST, SOUTH)
            .unwrap();
        assert_eq!(p.center_px, (50, 50));
        // direct 2-D kernel sum over the truncated square
        let s = 2.8f64;
        let norm: f64 = (-9..=9)
            .flat_map(|i| (-9..=9).map(move |j| (i, j)))
            .map(|(i, j): (i32, i32)| (-((i * i + j * j) as f64) / (2.0 * s * s)).exp())
            .sum();
        for r in 0..24 {
            for c in 0..24 {
                let (dx, dy) = (c as i32 - 12, r as i32 - 12);
                let expected = if dx.abs() <= 9 && dy.abs() <= 9 {
                    (-((dx * dx + dy * dy) as f64) / (2.0 * s * s)).exp() / norm
                } else {
                    0.0
                };
                assert!((p.at(r, c)[0] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn window_near_border_is_skipped() {
        let img = RgbImage::new(4000, 3000);
        let ex = extractor();
        assert!(ex.extract_patch(&img, Vec2::new(5.0, 5.0), EAST, SOUTH).is_none());
        // 12 px half-window plus 9 px apron
        assert!(ex.extract_patch(&img, Vec2::new(21.0, 21.0), EAST, SOUTH).is_some());
        assert!(ex.extract_patch(&img, Vec2::new(20.0, 21.0), EAST, SOUTH).is_none());
        assert!(ex.extract_patch(&img, Vec2::new(3980.0, 2979.0), EAST, SOUTH).is_none());
        assert!(ex.extract_patch(&img, Vec2::new(3979.0, 2979.0), EAST, SOUTH).is_some());
    }

    #[test]
    fn constant_patch_shape_families_are_zero() {
        let f = extractor().families(&constant_patch([0.4, 0.5, 0.6]));
        assert_eq!(f.grad, [0.0; 4]);
        assert_eq!(f.steer, [0.0; 10]);
        assert_eq!(f.hessian, [0.0; 2]);
        assert_eq!(f.dog, [0.0; 4]);
        let gray = color::srgb_to_luv([0.4, 0.5, 0.6]);
        for ch in 0..3 {
            assert!((f.color[3 * ch] - gray[ch]).abs() < 1e-12);
            assert_eq!(f.color[3 * ch + 1], 0.0);
            assert_eq!(f.color[3 * ch + 2], 0.0);
        }
    }

    #[test]
    fn two_tone_color_moments() {
        let mut p = constant_patch([0.0; 3]);
        for (i, px) in p.pixels.iter_mut().enumerate() {
            if i % 24 >= 12 {
                *px = [1.0; 3];
            }
        }
        let f = extractor().families(&p);
        // sorted-list oracle: 288 zeros then 288 hundreds
        let mut l: Vec<f64> = p.pixels.iter().map(|x| color::srgb_to_luv(*x)[0]).collect();
        l.sort_by(f64::total_cmp);
        assert_eq!(f.color[0], 0.5 * (l[287] + l[288]));
        assert!(f.color[2].abs() < 1e-12);
    }

    #[test]
    fn ramp_along_primary() {
        let p = patch_from_luma(|x, _| 0.5 + 0.01 * x, EAST, SOUTH);
        let f = extractor().families(&p);
        assert_eq!(f.grad[0], 0.0);
        assert!(f.grad[1] > 0.0);
        assert!(f.grad[2].abs() < 1e-12 && f.grad[3].abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_is_isotropic() {
        let l = Luma::from_fn(24, |r, c| {
            let (x, y) = (c as f64 - 12.0, r as f64 - 12.0);
            x * x + y * y
        });
        let [a, b] = filters::hessian_family(&l);
        assert!(a > 0.0 && ((a / b) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ridge_hessian_matches_finite_differences() {
        let l = Luma::from_fn(24, |_, c| {
            let x = c as f64 - 12.0;
            (-(x * x) / 8.0).exp()
        });
        let [a, b] = filters::hessian_family(&l);
        let f = |x: f64| (-(x * x) / 8.0).exp();
        let lxx = f(1.0) - 2.0 * f(0.0) + f(-1.0);
        assert!(a.abs() * 10.0 <= b.abs());
        assert!((b - lxx).abs() < 1e-9);
        assert!(a.abs() < 1e-9);
    }

    #[test]
    fn dog_bright_blob_is_negative_at_center() {
        let ex = extractor();
        let l = Luma::from_fn(24, |r, c| {
            let (x, y) = (c as f64 - 12.0, r as f64 - 12.0);
            (-(x * x + y * y) / 4.0).exp()
        });
        let (d1, d2) = ex.dog.responses(&l);
        // two-kernel oracle
        let s = 2.8f64;
        let e1 = ((1.6 * s).powi(2) - s * s).sqrt();
        let e2 = ((2.56 * s).powi(2) - s * s).sqrt();
        let blur = |sig: f64| {
            let w = filters::centered_gaussian(24, sig, 3.0);
            w.iter().zip(&l.values).map(|(a, b)| a * b).sum::<f64>()
        };
        let (b1, b2) = (blur(e1), blur(e2));
        assert!(d1 < 0.0);
        assert!((d1 - (b1 - 1.0)).abs() < 1e-9);
        assert!((d2 - (b2 - b1)).abs() < 1e-9);
        let r = ex.dog.family(&l);
        assert_eq!(r[0] * r[1], 0.0);
        assert_eq!(r[2] * r[3], 0.0);
    }

    #[test]
    fn grating_along_normal_favors_primary_orientation() {
        // stripes run along the normal direction, intensity varies along primary
        let primary = Vec2::new(0.8, 0.6);
        let normal = primary.perp();
        let p = patch_from_luma(
            |x, y| 0.5 + 0.4 * ((x * primary.x + y * primary.y) * std::f64::consts::TAU / 9.0).cos(),
            primary,
            normal,
        );
        let ex = extractor();
        let f = ex.families(&p);
        assert!(f.steer[0] > f.steer[1], "{:?}", f.steer);
    }

    #[test]
    fn compose_normalizes_and_flags_zero() {
        let mut raw = [0.0; DESCRIPTOR_LEN];
        let d = compose(&raw, &ColorScaling::default()).unwrap();
        assert!(d.degenerate);
        raw[3] = 3.0;
        raw[20] = 4.0;
        let d = compose(&raw, &ColorScaling::default()).unwrap();
        assert!(!d.degenerate);
        let n: f64 = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        raw[0] = f64::NAN;
        assert!(compose(&raw, &ColorScaling::default()).is_err());
    }

    #[test]
    fn names_cover_layout() {
        let names = component_names();
        assert_eq!(names.len(), DESCRIPTOR_LEN);
        for (family, range) in LAYOUT {
            for i in range {
                assert!(names[i].starts_with(family), "{i}: {}", names[i]);
            }
        }
    }

    #[test]
    fn color_scaling_fit() {
        let mut a = [0.0; DESCRIPTOR_LEN];
        let mut b = [0.0; DESCRIPTOR_LEN];
        a[0] = 1.0;
        b[0] = 3.0;
        let s = ColorScaling::fit([&a, &b]);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[1], 1.0);
        a[2] = 10.0;
        let s = ColorScaling::fit([&a, &b]);
        assert_eq!(s.std[2], 5.0);
    }
}
