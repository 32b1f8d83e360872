//! Range-image and point-cloud renders.

use image::{Rgb, RgbImage};
use rangeseg::class::INVALID_COLOR;
use rangeseg::range_projection::image::DEPTH;
use rangeseg::{Class, RangeImage, Result};

/// Range-image view: depth as grayscale `255 (1 - d / d_max)`, object
/// classes painted over it, black where there is no return. Row 0 (lowest
/// elevation) is drawn at the bottom.
pub fn render_png(img: &RangeImage, labels: &[Option<Class>]) -> Result<RgbImage> {
    let depth = img.channel(DEPTH)?;
    let d_max = depth.iter().copied().fold(0.0f32, f32::max);
    let (h, w) = (img.height(), img.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    for row in 0..h {
        for col in 0..w {
            let i = img.index(row, col);
            let color = match labels.get(i).copied().flatten() {
                _ if !img.mask()[i] => INVALID_COLOR,
                Some(c) if c != Class::Background => c.color(),
                _ => {
                    let g = if d_max > 0.0 { 255.0 * (1.0 - depth[i] / d_max) } else { 0.0 };
                    [g.clamp(0.0, 255.0).round() as u8; 3]
                }
            };
            out.put_pixel(col as u32, (h - 1 - row) as u32, Rgb(color));
        }
    }
    Ok(out)
}
