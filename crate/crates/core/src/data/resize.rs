use super::frame::FRAME_SIDE;
use super::pgm::GrayImage;
use crate::error::{Error, Result};

/// Bilinear resampling with pixel-centre alignment and edge clamping.
///
/// Destination pixel `d` samples source coordinate `(d + 0.5) * src/dst - 0.5`,
/// clamped to the image, so equal sizes reproduce the input exactly.
pub fn resize_bilinear(image: &GrayImage, target_width: usize, target_height: usize) -> Result<Vec<f64>> {
    if image.width == 0 || image.height == 0 || target_width == 0 || target_height == 0 {
        return Err(Error::Contract(format!(
            "cannot resize {}x{} image to {}x{}",
            image.width, image.height, target_width, target_height
        )));
    }
    if image.width == target_width && image.height == target_height {
        return Ok(image.pixels.clone());
    }
    let xs = axis_samples(image.width, target_width);
    let ys = axis_samples(image.height, target_height);
    let w = image.width;
    let mut out = Vec::with_capacity(target_width * target_height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = image.pixels[y0 * w + x0];
            let p01 = image.pixels[y0 * w + x1];
            let p10 = image.pixels[y1 * w + x0];
            let p11 = image.pixels[y1 * w + x1];
            let top = p00 + (p01 - p00) * fx;
            let bottom = p10 + (p11 - p10) * fx;
            out.push((top + (bottom - top) * fy).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// For each destination index: the two source neighbours and the blend weight.
fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Resizes to the canonical 64×64 model input.
pub fn to_frame_pixels(image: &GrayImage) -> Result<Vec<f64>> {
    resize_bilinear(image, FRAME_SIDE, FRAME_SIDE)
}
