//! Synthetic dataset generation and on-disk layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/{train,test}/NNNN.png           RGB image
//! <dir>/{train,test}/NNNN.dots.json     head positions and radii
//! <dir>/{train,test}/NNNN.density.bin   ground-truth density map
//! ```
//!
//! Density files are little-endian: the magic `DENS`, a `u32` version, `u32`
//! height and width, then `height * width` `f32` values in row-major order.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::{Shape, Tensor};

use super::density::Dot;
use super::scene::{generate_scenes, Scene, SceneConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const DENSITY_MAGIC: &[u8; 4] = b"DENS";
const DENSITY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub scene: SceneConfig,
    pub num_train: usize,
    pub num_test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

#[derive(Serialize, Deserialize)]
struct Annotations {
    dots: Vec<Dot>,
    head_radii: Vec<f32>,
    density_radius: f32,
}

/// Generates a train and a test split; the two draw from independent
/// seed streams.
pub fn synthesize(scene: &SceneConfig, num_train: usize, num_test: usize, seed: u64) -> Result<Dataset, DataError> {
    scene.validate()?;
    Ok(Dataset {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            seed,
            scene: scene.clone(),
            num_train,
            num_test,
        },
        train: generate_scenes(scene, num_train, crate::seed::derive_seed(seed, "train"))?,
        test: generate_scenes(scene, num_test, crate::seed::derive_seed(seed, "test"))?,
    })
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn image_to_png(image: &Tensor<f32>, path: &Path) -> Result<(), DataError> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(malformed(path, format!("expected a 1x3xHxW image, got {s:?}")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| (image.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| malformed(path, e.to_string()))
}

pub fn image_from_png(path: &Path) -> Result<Tensor<f32>, DataError> {
    let img = image::open(path).map_err(|e| malformed(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

pub fn density_to_bytes(map: &Tensor<f32>) -> Vec<u8> {
    let s = map.shape();
    let mut buf = Vec::with_capacity(16 + 4 * s.plane());
    buf.extend_from_slice(DENSITY_MAGIC);
    for v in [DENSITY_VERSION, s.h as u32, s.w as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in map.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn density_from_bytes(bytes: &[u8], path: &Path) -> Result<Tensor<f32>, DataError> {
    if bytes.len() < 16 || &bytes[..4] != DENSITY_MAGIC {
        return Err(malformed(path, "missing density header"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
    if word(4) != DENSITY_VERSION as usize {
        return Err(malformed(path, format!("unsupported density version {}", word(4))));
    }
    let (h, w) = (word(8), word(12));
    if bytes.len() != 16 + 4 * h * w {
        return Err(malformed(path, "density payload size does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data).map_err(|e| malformed(path, e.to_string()))
}

fn scene_paths(dir: &Path, split: &str, i: usize) -> [PathBuf; 3] {
    let d = dir.join(split);
    [
        d.join(format!("{i:04}.png")),
        d.join(format!("{i:04}.dots.json")),
        d.join(format!("{i:04}.density.bin")),
    ]
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    for (split, scenes) in [("train", &ds.train), ("test", &ds.test)] {
        let d = dir.join(split);
        std::fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
        for (i, s) in scenes.iter().enumerate() {
            let [png, dots, dens] = scene_paths(dir, split, i);
            image_to_png(&s.image, &png)?;
            let ann = Annotations {
                dots: s.dots.clone(),
                head_radii: s.head_radii.clone(),
                density_radius: s.density_radius,
            };
            let mut text = serde_json::to_string(&ann).expect("annotations serialize");
            text.push('\n');
            write(&dots, text.as_bytes())?;
            write(&dens, &density_to_bytes(&s.density))?;
        }
    }
    let mut text = serde_json::to_string_pretty(&ds.manifest).expect("manifest serialize");
    text.push('\n');
    write(&dir.join("manifest.json"), text.as_bytes())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

fn load_scene(dir: &Path, split: &str, i: usize) -> Result<Scene, DataError> {
    let [png, dots, dens] = scene_paths(dir, split, i);
    let image = image_from_png(&png)?;
    let ann: Annotations =
        serde_json::from_slice(&read(&dots)?).map_err(|e| malformed(&dots, e.to_string()))?;
    let density = density_from_bytes(&read(&dens)?, &dens)?;
    let (is, ds) = (image.shape(), density.shape());
    if (is.h, is.w) != (ds.h, ds.w) {
        return Err(malformed(&dens, "density size differs from image size"));
    }
    if ann.dots.len() != ann.head_radii.len() {
        return Err(malformed(&dots, "dot and radius counts differ"));
    }
    Ok(Scene {
        image,
        dots: ann.dots,
        head_radii: ann.head_radii,
        density_radius: ann.density_radius,
        density,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let mpath = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_slice(&read(&mpath)?).map_err(|e| malformed(&mpath, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(malformed(&mpath, format!("unsupported manifest version {}", manifest.version)));
    }
    let train = (0..manifest.num_train)
        .map(|i| load_scene(dir, "train", i))
        .collect::<Result<_, _>>()?;
    let test = (0..manifest.num_test)
        .map(|i| load_scene(dir, "test", i))
        .collect::<Result<_, _>>()?;
    Ok(Dataset { manifest, train, test })
}
