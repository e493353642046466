//! The continuously relaxed supernet and the discrete network derived from
//! a genotype. Both share the same encoder-decoder skeleton.

mod arch;
mod backbone;
mod config;
mod derived;
mod io;
mod layers;
mod search;

pub use arch::{ArchStore, ArchVars};
pub use backbone::{Backbone, CellBody};
pub use config::{ChannelPlan, NetConfig, TapSource, EXTRACTION_NODES, FUSION_NODES};
pub use derived::{DerivedEdge, DerivedNet, Mode, BN_MOMENTUM};
pub use io::{load_weights, save_weights, weights_to_bytes, WEIGHTS_MAGIC};
pub use layers::{Conv, Ctx, Norm, NormMode, OpLayer, RunningStats};
pub use search::{draw_mask, mixed_op_forward, node_forward, MixedOp, Supernet};
