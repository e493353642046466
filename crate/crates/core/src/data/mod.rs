//! Synthetic crowd scenes, density maps, augmentation, metrics and dataset
//! files.

mod augment;
mod dataset;
mod density;
mod metrics;
mod render;
mod scene;

pub use augment::{augment, flip_horizontal, rotate_quarter, zoom_out, AugmentConfig};
pub use dataset::{
    density_from_bytes, density_to_bytes, image_from_png, image_to_png, load_dataset, save_dataset,
    synthesize, Dataset, Manifest, DENSITY_MAGIC, MANIFEST_VERSION,
};
pub use density::{check_dot, density_map, Dot};
pub use metrics::{count_mae, count_rmse, evaluate, psnr, ssim, Metrics, PSNR_CAP_DB};
pub use render::density_to_png;
pub use scene::{generate_scene, generate_scenes, Scene, SceneConfig};
