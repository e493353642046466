//! Differentiable two-level architecture search for density-map crowd
//! counting.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: tensors, the recording tape, optimizers.
//! - [`search_space`]: operation catalogs, cell templates, architecture
//!   parameters and genotype derivation.
//! - [`supernet`]: the continuously relaxed encoder-decoder and the discrete
//!   network built from a genotype.
//! - [`spploss`]: the searchable scale-pyramid pooling loss.
//! - [`bilevel`]: alternating search of weights and architecture, and
//!   retraining of derived networks.
//! - [`data`]: synthetic scenes, density maps, augmentation, metrics and
//!   dataset files.

pub mod autodiff;
pub mod bilevel;
pub mod data;
pub mod error;
pub mod search_space;
pub mod seed;
pub mod spploss;
pub mod supernet;
pub mod tensor;

pub use error::{DataError, GenotypeError, NetworkError, TensorError, TrainError};
pub use tensor::{Real, Shape, Tensor};
