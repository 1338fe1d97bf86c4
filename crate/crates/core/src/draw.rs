//! Minimal raster drawing on RGB images: thick lines, polylines and rings.

use image::{Rgb, RgbImage};

use crate::geom::Vec2;

pub const BLUE: Rgb<u8> = Rgb([30, 90, 255]);
pub const RED: Rgb<u8> = Rgb([235, 30, 30]);
pub const GREEN: Rgb<u8> = Rgb([40, 200, 70]);
pub const YELLOW: Rgb<u8> = Rgb([250, 220, 40]);
pub const MAGENTA: Rgb<u8> = Rgb([220, 50, 220]);
pub const CYAN: Rgb<u8> = Rgb([40, 210, 230]);
pub const GRAY: Rgb<u8> = Rgb([150, 150, 150]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Fills a disc of the given radius, clipped to the image.
pub fn disc(img: &mut RgbImage, c: Vec2, radius: f64, color: Rgb<u8>) {
    let r = radius.max(0.5);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, x1) = ((c.x - r).floor() as i64, (c.x + r).ceil() as i64);
    let (y0, y1) = ((c.y - r).floor() as i64, (c.y + r).ceil() as i64);
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            let (dx, dy) = (x as f64 - c.x, y as f64 - c.y);
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Line of the given width from `a` to `b`.
pub fn line(img: &mut RgbImage, a: Vec2, b: Vec2, width: f64, color: Rgb<u8>) {
    if !(a.is_finite() && b.is_finite()) {
        return;
    }
    let len = (b - a).norm();
    let steps = (len / 0.5).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let p = a + (b - a) * (k as f64 / steps as f64);
        disc(img, p, 0.5 * width, color);
    }
}

pub fn polyline(img: &mut RgbImage, pts: &[Vec2], width: f64, color: Rgb<u8>) {
    for w in pts.windows(2) {
        line(img, w[0], w[1], width, color);
    }
}

/// Circle outline.
pub fn ring(img: &mut RgbImage, c: Vec2, radius: f64, width: f64, color: Rgb<u8>) {
    let steps = (radius * std::f64::consts::TAU).ceil().max(8.0) as usize;
    let pts: Vec<Vec2> = (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64 * std::f64::consts::TAU;
            c + Vec2::new(t.cos(), t.sin()) * radius
        })
        .collect();
    polyline(img, &pts, width, color);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_marks_endpoints_and_clips() {
        let mut img = RgbImage::new(20, 20);
        line(&mut img, Vec2::new(2.0, 2.0), Vec2::new(30.0, 2.0), 1.0, RED);
        assert_eq!(*img.get_pixel(2, 2), RED);
        assert_eq!(*img.get_pixel(19, 2), RED);
        assert_eq!(*img.get_pixel(10, 10), BLACK);
    }
}
