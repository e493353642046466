use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::search_space::GenotypeConfig;

/// Intermediate nodes per extraction cell (the cell output concatenates them).
pub const EXTRACTION_NODES: usize = 4;
/// Intermediate nodes per fusion cell.
pub const FUSION_NODES: usize = 2;

/// Size of a searched or derived network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of extraction cells.
    pub m: usize,
    /// Channel width of the deepest encoder stage.
    pub c: usize,
    /// Partial-channel divisor: each mixed op sees `ceil(width / k)` channels.
    pub k: usize,
}

impl NetConfig {
    pub fn new(m: usize, c: usize, k: usize) -> Result<Self, NetworkError> {
        let cfg = NetConfig { m, c, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.m < 2 {
            return Err(NetworkError::Config(format!("M must be at least 2, got {}", self.m)));
        }
        if self.c == 0 || self.c % 16 != 0 {
            return Err(NetworkError::Config(format!(
                "C must be a positive multiple of 16, got {}",
                self.c
            )));
        }
        if self.k == 0 {
            return Err(NetworkError::Config("K must be at least 1".into()));
        }
        Ok(())
    }

    pub fn genotype_config(&self, seed: u64) -> GenotypeConfig {
        GenotypeConfig {
            m: self.m,
            c: self.c,
            k: self.k,
            seed,
        }
    }

    /// Channels routed through the mixed op on an edge of width `width`.
    pub fn partial_width(&self, width: usize) -> usize {
        width.div_ceil(self.k).max(1)
    }
}

/// Where an encoder feature tap is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapSource {
    /// Output of the cell with this index.
    Cell(usize),
    /// Output of the second downsampling transition.
    Transition,
}

/// Channel widths and resolution changes of the encoder.
///
/// Stage 1 is the first cell at width `C/4` and full resolution. A
/// downsampling transition (ReLU, 1x1 conv doubling the width, 2x2 max pool)
/// follows it; stage 2 holds cells 2..=min(3, M) at `C/2`. A second
/// transition leads into stage 3, cells 4..=M at width `C`. The decoder taps
/// the output of each stage; when stage 3 is empty the second transition's
/// output stands in for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPlan {
    pub c: usize,
    /// Width of every extraction cell, in order.
    pub cell_widths: Vec<usize>,
    /// Cell indices followed by a downsampling transition.
    pub transitions: [usize; 2],
    pub taps: [TapSource; 3],
    pub tap_widths: [usize; 3],
    /// Width of the fused decoder nodes and of the projected taps.
    pub fusion_node_width: usize,
}

impl ChannelPlan {
    pub fn new(cfg: &NetConfig) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let c = cfg.c;
        let stage2_end = cfg.m.min(3) - 1;
        let cell_widths = (0..cfg.m)
            .map(|i| match i {
                0 => c / 4,
                i if i <= stage2_end => c / 2,
                _ => c,
            })
            .collect();
        let f3 = if cfg.m >= 4 {
            TapSource::Cell(cfg.m - 1)
        } else {
            TapSource::Transition
        };
        Ok(ChannelPlan {
            c,
            cell_widths,
            transitions: [0, stage2_end],
            taps: [TapSource::Cell(0), TapSource::Cell(stage2_end), f3],
            tap_widths: [c / 4, c / 2, c],
            fusion_node_width: c / 8,
        })
    }

    pub fn stem_width(&self) -> usize {
        self.c / 4
    }

    pub fn node_width(&self, cell: usize) -> usize {
        self.cell_widths[cell] / EXTRACTION_NODES
    }

    /// Whether the cell's two inputs are both the single preceding tensor
    /// (first cell, or first cell after a transition).
    pub fn resets_history(&self, cell: usize) -> bool {
        cell == 0 || self.transitions.iter().any(|&t| t + 1 == cell)
    }

    /// Decoder output channels before the head.
    pub fn fusion_width(&self) -> usize {
        self.fusion_node_width * FUSION_NODES
    }

    /// Overall downsampling of the deepest tap.
    pub const DEPTH_FACTOR: usize = 4;
}
