//! Seeded synthetic crowd scenes.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::seed::{self, Rng};
use crate::tensor::{Shape, Tensor};

use super::density::{density_map, Dot};

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Square image side in pixels; a positive multiple of 8.
    pub size: usize,
    pub min_count: usize,
    pub max_count: usize,
    /// Head radius at the bottom row, as a fraction of `size`.
    pub near_radius: f32,
    /// Head radius at the top row, as a fraction of `size`.
    pub far_radius: f32,
    /// Density kernel radius, as a fraction of `size`.
    pub density_radius: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 32,
            min_count: 5,
            max_count: 40,
            near_radius: 0.09,
            far_radius: 0.045,
            density_radius: 0.125,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.size == 0 || self.size % 8 != 0 {
            return Err(DataError::ImageSize(self.size));
        }
        if self.min_count > self.max_count {
            return Err(DataError::EmptyCountRange(self.min_count, self.max_count));
        }
        for r in [self.near_radius, self.far_radius, self.density_radius] {
            if !(r.is_finite() && r > 0.0) {
                return Err(DataError::Radius(r));
            }
        }
        Ok(())
    }

    /// Head radius at vertical position `y`, shrinking linearly towards the
    /// top of the image to mimic perspective.
    pub fn radius_at(&self, y: f32) -> f32 {
        let s = self.size as f32;
        let t = (y / s).clamp(0.0, 1.0);
        s * (self.far_radius + (self.near_radius - self.far_radius) * t)
    }

    /// Density kernel radius in pixels.
    pub fn density_radius_px(&self) -> f32 {
        self.density_radius * self.size as f32
    }
}

/// One annotated image: `image` is `1 x 3 x H x W` with values in `[0, 1]`
/// quantized to multiples of 1/255; `density` is `1 x 1 x H x W`, rendered
/// from `dots` with kernel radius `density_radius`. `head_radii` are the
/// rendered head sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Tensor<f32>,
    pub dots: Vec<Dot>,
    pub head_radii: Vec<f32>,
    pub density_radius: f32,
    pub density: Tensor<f32>,
}

impl Scene {
    pub fn count(&self) -> usize {
        self.dots.len()
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}

pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Generates one scene from `rng`.
pub fn generate_scene(cfg: &SceneConfig, rng: &mut Rng) -> Result<Scene, DataError> {
    cfg.validate()?;
    let s = cfg.size;
    let count = rng.random_range(cfg.min_count..=cfg.max_count);
    let dots: Vec<Dot> = (0..count)
        .map(|_| Dot {
            x: rng.random_range(0.0..s as f32),
            y: rng.random_range(0.0..s as f32),
        })
        .collect();
    let head_radii: Vec<f32> = dots.iter().map(|d| cfg.radius_at(d.y)).collect();

    // Background: a tinted vertical gradient with pixel noise.
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.35));
    let tilt = rng.random_range(-0.08..0.08f32);
    let mut pixels = vec![0.0f32; 3 * s * s];
    for i in 0..s {
        let g = tilt * (i as f32 / s as f32 - 0.5);
        for j in 0..s {
            let noise = rng.random_range(-0.03..0.03f32);
            for (c, b) in base.iter().enumerate() {
                pixels[(c * s + i) * s + j] = b + g + noise;
            }
        }
    }
    // Heads: bright soft disks blended over the background.
    for (d, &r) in dots.iter().zip(&head_radii) {
        let tone: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.7..0.95));
        let spread = 0.5 * r;
        let inv = 1.0 / (2.0 * spread * spread);
        let lo_i = (d.y - r).floor().max(0.0) as usize;
        let hi_i = ((d.y + r).ceil() as usize).min(s);
        let lo_j = (d.x - r).floor().max(0.0) as usize;
        let hi_j = ((d.x + r).ceil() as usize).min(s);
        for i in lo_i..hi_i {
            for j in lo_j..hi_j {
                let dy = i as f32 + 0.5 - d.y;
                let dx = j as f32 + 0.5 - d.x;
                let a = (-(dx * dx + dy * dy) * inv).exp();
                for (c, t) in tone.iter().enumerate() {
                    let p = &mut pixels[(c * s + i) * s + j];
                    *p = *p * (1.0 - a) + t * a;
                }
            }
        }
    }
    pixels.iter_mut().for_each(|p| *p = quantize(*p));
    let image = Tensor::from_vec(Shape::new(1, 3, s, s), pixels).expect("scene image shape");
    let density_radius = cfg.density_radius_px();
    let density = density_map(&dots, s, s, density_radius)?;
    Ok(Scene {
        image,
        dots,
        head_radii,
        density_radius,
        density,
    })
}

/// Generates `n` scenes in parallel; scene `i` depends only on
/// `(seed, i)`, so the result is independent of scheduling.
pub fn generate_scenes(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Vec<Scene>, DataError> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(cfg, &mut seed::rng_for(seed, &format!("scene-{i}"))))
        .collect()
}
