//! PNG renderings of density maps.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::DataError;
use crate::tensor::Tensor;

/// Writes the first map of `density` as 8-bit grayscale scaled by `peak`
/// (the map's own maximum when `None`).
pub fn density_to_png(density: &Tensor<f32>, peak: Option<f32>, path: &Path) -> Result<(), DataError> {
    let s = density.shape();
    let plane = density.plane(0, 0);
    let peak = peak.unwrap_or_else(|| plane.iter().copied().fold(0.0, f32::max));
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let img = GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let v = plane[y as usize * s.w + x as usize];
        Luma([(v * scale).clamp(0.0, 255.0).round() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
