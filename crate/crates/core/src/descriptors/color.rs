//! sRGB to CIELUV conversion and per-channel distribution moments.

use serde::{Deserialize, Serialize};

/// Linear sRGB to XYZ, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn white() -> [f64; 3] {
    [
        RGB_TO_XYZ[0].iter().sum(),
        RGB_TO_XYZ[1].iter().sum(),
        RGB_TO_XYZ[2].iter().sum(),
    ]
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn chromaticity(x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
    let d = x + 15.0 * y + 3.0 * z;
    (d > 0.0).then(|| (4.0 * x / d, 9.0 * y / d))
}

/// Converts an sRGB triple in [0, 1] to (L*, u*, v*).
pub fn srgb_to_luv(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let [x, y, z] = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let [xn, yn, zn] = white();
    let yr = y / yn;
    let l = if yr > EPSILON {
        116.0 * yr.cbrt() - 16.0
    } else {
        KAPPA * yr
    };
    let (un, vn) = chromaticity(xn, yn, zn).expect("white is non-black");
    match chromaticity(x, y, z) {
        Some((u, v)) => [l, 13.0 * l * (u - un), 13.0 * l * (v - vn)],
        None => [l, 0.0, 0.0],
    }
}

/// Location statistic for the first color moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorCenter {
    #[default]
    Median,
    Mean,
}

/// Median with the midpoint convention for even counts. Sorts in place.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// (center, population standard deviation, standardized third moment).
/// Skewness of a zero-variance channel is 0.
pub fn moments(values: &mut [f64], center: ColorCenter) -> [f64; 3] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let (std, skew) = if var.sqrt() > 1e-12 * (1.0 + mean.abs()) {
        let std = var.sqrt();
        let skew = values.iter().map(|v| ((v - mean) / std).powi(3)).sum::<f64>() / n;
        (std, skew)
    } else {
        (0.0, 0.0)
    };
    let c = match center {
        ColorCenter::Median => median(values),
        ColorCenter::Mean => mean,
    };
    [c, std, skew]
}

/// Nine color moments in (L, u, v) channel order from sRGB pixels, unscaled.
pub fn luv_moments(pixels: &[[f64; 3]], center: ColorCenter) -> [f64; 9] {
    let luv: Vec<[f64; 3]> = pixels.iter().map(|p| srgb_to_luv(*p)).collect();
    channel_moments(&luv, center)
}

/// Nine moments of already converted (L, u, v) pixels.
pub fn channel_moments(luv: &[[f64; 3]], center: ColorCenter) -> [f64; 9] {
    let mut channels = [
        Vec::with_capacity(luv.len()),
        Vec::with_capacity(luv.len()),
        Vec::with_capacity(luv.len()),
    ];
    for p in luv {
        for (ch, v) in channels.iter_mut().zip(*p) {
            ch.push(v);
        }
    }
    let mut out = [0.0; 9];
    for (i, ch) in channels.iter_mut().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(&moments(ch, center));
    }
    out
}
