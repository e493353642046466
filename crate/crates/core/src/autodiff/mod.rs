//! Deterministic reverse-mode automatic differentiation over rank-4 tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! replays the recording in reverse. Parameters live in a [`ParamStore`] and
//! are bound to a fresh tape for every step.

mod conv;
mod gradcheck;
mod optim;
mod params;
mod pool;
mod tape;

pub use conv::ConvGeom;
pub use gradcheck::{gradcheck, GradCheck};
pub use optim::{cosine_lr, step_decay_lr, Adam, Sgd};
pub use params::{Binding, ParamId, ParamStore};
pub use pool::{PoolGeom, PoolKind};
pub use tape::{BatchStats, ChannelMask, Gradients, Tape, Var};

/// Normalization epsilon shared by every batch-norm layer.
pub const BN_EPS: f64 = 1e-5;
