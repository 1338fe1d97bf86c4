//! ROC curve rendering.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::RocCurve;
use crate::draw;
use crate::error::Result;
use crate::geom::Vec2;

/// Distinct colors assigned to curves in order.
pub const PALETTE: [Rgb<u8>; 6] = [draw::RED, draw::BLUE, draw::GREEN, draw::MAGENTA, draw::CYAN, draw::YELLOW];

/// Draws all curves on one unit-square chart with the chance diagonal and a
/// 0.1 grid. Curve `k` uses `PALETTE[k % 6]`.
pub fn render_roc(curves: &[&RocCurve], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, draw::WHITE);
    let margin = (size as f64 * 0.08).round();
    let span = size as f64 - 2.0 * margin;
    let to_px = |fpr: f64, tpr: f64| Vec2::new(margin + fpr * span, margin + (1.0 - tpr) * span);
    for k in 0..=10 {
        let f = k as f64 / 10.0;
        let light = Rgb([225, 225, 225]);
        draw::line(&mut img, to_px(f, 0.0), to_px(f, 1.0), 1.0, light);
        draw::line(&mut img, to_px(0.0, f), to_px(1.0, f), 1.0, light);
    }
    draw::line(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), 1.0, draw::GRAY);
    for (a, b) in [((0.0, 0.0), (1.0, 0.0)), ((0.0, 0.0), (0.0, 1.0)), ((1.0, 0.0), (1.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))] {
        draw::line(&mut img, to_px(a.0, a.1), to_px(b.0, b.1), 2.0, draw::BLACK);
    }
    for (k, curve) in curves.iter().enumerate() {
        let pts: Vec<Vec2> = curve.points.iter().map(|p| to_px(p.fpr, p.tpr)).collect();
        draw::polyline(&mut img, &pts, 2.5, PALETTE[k % PALETTE.len()]);
    }
    img
}

pub fn write_roc_png(path: impl AsRef<Path>, curves: &[&RocCurve], size: u32) -> Result<()> {
    render_roc(curves, size).save(path.as_ref())?;
    Ok(())
}
