//! Count-preserving augmentation.
//!
//! Every transform moves the head annotations and re-renders the density
//! map from them, so the count is preserved exactly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::seed::Rng;
use crate::tensor::{Shape, Tensor};

use super::density::{density_map, Dot};
use super::scene::{quantize, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    /// Zoom-out factor range; `[1.0, 1.0]` disables scaling.
    pub scale_min: f32,
    pub scale_max: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            rotate: true,
            scale_min: 0.75,
            scale_max: 1.0,
        }
    }
}

fn rebuild(image: Tensor<f32>, dots: Vec<Dot>, head_radii: Vec<f32>, density_radius: f32) -> Result<Scene, DataError> {
    let s = image.shape();
    let density = density_map(&dots, s.h, s.w, density_radius)?;
    Ok(Scene {
        image,
        dots,
        head_radii,
        density_radius,
        density,
    })
}

/// Mirrors left-right.
pub fn flip_horizontal(scene: &Scene) -> Result<Scene, DataError> {
    let s = scene.image.shape();
    let image = Tensor::from_fn(s, |n, c, h, w| scene.image.at(n, c, h, s.w - 1 - w));
    let dots = scene
        .dots
        .iter()
        .map(|d| Dot {
            x: s.w as f32 - d.x,
            y: d.y,
        })
        .collect();
    rebuild(image, dots, scene.head_radii.clone(), scene.density_radius)
}

/// Rotates clockwise by `quarter_turns * 90` degrees. Odd turns swap the
/// image sides.
pub fn rotate_quarter(scene: &Scene, quarter_turns: usize) -> Result<Scene, DataError> {
    let mut out = scene.clone();
    for _ in 0..quarter_turns % 4 {
        let s = out.image.shape();
        let rotated = Shape::new(s.n, s.c, s.w, s.h);
        // Clockwise: new (row, col) = (col, H - 1 - row).
        let image = Tensor::from_fn(rotated, |n, c, h, w| out.image.at(n, c, s.h - 1 - w, h));
        let dots = out
            .dots
            .iter()
            .map(|d| Dot {
                x: s.h as f32 - d.y,
                y: d.x,
            })
            .collect();
        out = rebuild(image, dots, out.head_radii.clone(), out.density_radius)?;
    }
    Ok(out)
}

/// Shrinks the content by `factor` (in `(0, 1]`) about the image center,
/// filling the uncovered border by edge clamping. Head radii shrink too;
/// the density kernel radius is an annotation convention and stays fixed.
pub fn zoom_out(scene: &Scene, factor: f32) -> Result<Scene, DataError> {
    let s = scene.image.shape();
    let (cx, cy) = (s.w as f32 / 2.0, s.h as f32 / 2.0);
    let src = &scene.image;
    let image = Tensor::from_fn(s, |n, c, h, w| {
        // Source position of the output pixel center, in pixel-center units.
        let x = cx + (w as f32 + 0.5 - cx) / factor - 0.5;
        let y = cy + (h as f32 + 0.5 - cy) / factor - 0.5;
        let x = x.clamp(0.0, (s.w - 1) as f32);
        let y = y.clamp(0.0, (s.h - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(s.w - 1), (y0 + 1).min(s.h - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let top = src.at(n, c, y0, x0) * (1.0 - fx) + src.at(n, c, y0, x1) * fx;
        let bottom = src.at(n, c, y1, x0) * (1.0 - fx) + src.at(n, c, y1, x1) * fx;
        quantize(top * (1.0 - fy) + bottom * fy)
    });
    let dots = scene
        .dots
        .iter()
        .map(|d| Dot {
            x: (cx + factor * (d.x - cx)).clamp(0.0, s.w as f32),
            y: (cy + factor * (d.y - cy)).clamp(0.0, s.h as f32),
        })
        .collect();
    let radii = scene.head_radii.iter().map(|r| r * factor).collect();
    rebuild(image, dots, radii, scene.density_radius)
}

/// Applies a random flip, quarter-turn rotation (90 and 270 degrees only on
/// square images) and zoom-out.
pub fn augment(scene: &Scene, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Scene, DataError> {
    let mut out = scene.clone();
    if cfg.flip && rng.random_bool(0.5) {
        out = flip_horizontal(&out)?;
    }
    if cfg.rotate {
        let square = out.height() == out.width();
        let turns = if square { rng.random_range(0..4) } else { 2 * rng.random_range(0..2) };
        if turns > 0 {
            out = rotate_quarter(&out, turns)?;
        }
    }
    if cfg.scale_min < cfg.scale_max {
        let f = rng.random_range(cfg.scale_min..=cfg.scale_max);
        out = zoom_out(&out, f)?;
    } else if cfg.scale_min < 1.0 {
        out = zoom_out(&out, cfg.scale_min)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{generate_scenes, SceneConfig};
    use crate::seed::rng_for;

    fn scene() -> Scene {
        generate_scenes(&SceneConfig::default(), 1, 3).unwrap().remove(0)
    }

    fn mass(s: &Scene) -> f64 {
        s.density.data().iter().map(|&v| v as f64).sum()
    }

    #[test]
    fn flip_twice_is_identity() {
        let s = scene();
        let t = flip_horizontal(&flip_horizontal(&s).unwrap()).unwrap();
        assert_eq!(s.image, t.image);
        for (a, b) in s.dots.iter().zip(&t.dots) {
            assert!((a.x - b.x).abs() < 1e-4 && a.y == b.y);
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let s = scene();
        let t = rotate_quarter(&s, 4).unwrap();
        assert_eq!(s.image, t.image);
        let u = rotate_quarter(&rotate_quarter(&s, 1).unwrap(), 3).unwrap();
        assert_eq!(s.image, u.image);
    }

    #[test]
    fn augmentation_preserves_count() {
        let s = scene();
        let mut rng = rng_for(1, "aug");
        for _ in 0..20 {
            let t = augment(&s, &AugmentConfig::default(), &mut rng).unwrap();
            assert_eq!(t.count(), s.count());
            assert!((mass(&t) - s.count() as f64).abs() < 1e-3 * s.count() as f64);
        }
    }

    #[test]
    fn unit_zoom_keeps_image() {
        let s = scene();
        let t = zoom_out(&s, 1.0).unwrap();
        assert_eq!(s.image, t.image);
    }
}
