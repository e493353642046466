use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::PoolKind;

/// Candidate operations on an extraction or fusion cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroOpKind {
    /// 1x1 common convolution.
    Conv1x1,
    /// 3x3 convolution with dilation rate 2.
    Dilated3,
    Dilated5,
    Dilated7,
    /// 3x3 depthwise-separable convolution.
    Sep3,
    Sep5,
    Sep7,
    Skip,
    Zero,
}

impl MicroOpKind {
    pub const ALL: [MicroOpKind; 9] = [
        MicroOpKind::Conv1x1,
        MicroOpKind::Dilated3,
        MicroOpKind::Dilated5,
        MicroOpKind::Dilated7,
        MicroOpKind::Sep3,
        MicroOpKind::Sep5,
        MicroOpKind::Sep7,
        MicroOpKind::Skip,
        MicroOpKind::Zero,
    ];

    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MicroOpKind::Conv1x1 => "conv1x1",
            MicroOpKind::Dilated3 => "dilated3",
            MicroOpKind::Dilated5 => "dilated5",
            MicroOpKind::Dilated7 => "dilated7",
            MicroOpKind::Sep3 => "sep3",
            MicroOpKind::Sep5 => "sep5",
            MicroOpKind::Sep7 => "sep7",
            MicroOpKind::Skip => "skip",
            MicroOpKind::Zero => "zero",
        }
    }

    /// Kernel size and dilation of the convolutional candidates.
    pub fn kernel(self) -> Option<(usize, usize)> {
        match self {
            MicroOpKind::Conv1x1 => Some((1, 1)),
            MicroOpKind::Dilated3 => Some((3, 2)),
            MicroOpKind::Dilated5 => Some((5, 2)),
            MicroOpKind::Dilated7 => Some((7, 2)),
            MicroOpKind::Sep3 => Some((3, 1)),
            MicroOpKind::Sep5 => Some((5, 1)),
            MicroOpKind::Sep7 => Some((7, 1)),
            MicroOpKind::Skip | MicroOpKind::Zero => None,
        }
    }

    pub fn is_separable(self) -> bool {
        matches!(self, MicroOpKind::Sep3 | MicroOpKind::Sep5 | MicroOpKind::Sep7)
    }
}

impl fmt::Display for MicroOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MicroOpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown micro op `{s}`"))
    }
}

/// Candidate stride-2 pooling operations of the loss pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOpKind {
    Max2,
    Max4,
    Max6,
    Avg2,
    Avg4,
    Avg6,
}

impl PoolOpKind {
    pub const ALL: [PoolOpKind; 6] = [
        PoolOpKind::Max2,
        PoolOpKind::Max4,
        PoolOpKind::Max6,
        PoolOpKind::Avg2,
        PoolOpKind::Avg4,
        PoolOpKind::Avg6,
    ];

    pub const COUNT: usize = 6;
    pub const STRIDE: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn kind(self) -> PoolKind {
        match self {
            PoolOpKind::Max2 | PoolOpKind::Max4 | PoolOpKind::Max6 => PoolKind::Max,
            _ => PoolKind::Avg,
        }
    }

    pub fn kernel(self) -> usize {
        match self {
            PoolOpKind::Max2 | PoolOpKind::Avg2 => 2,
            PoolOpKind::Max4 | PoolOpKind::Avg4 => 4,
            PoolOpKind::Max6 | PoolOpKind::Avg6 => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolOpKind::Max2 => "max2",
            PoolOpKind::Max4 => "max4",
            PoolOpKind::Max6 => "max6",
            PoolOpKind::Avg2 => "avg2",
            PoolOpKind::Avg4 => "avg4",
            PoolOpKind::Avg6 => "avg6",
        }
    }
}

impl fmt::Display for PoolOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_sizes() {
        assert_eq!(MicroOpKind::ALL.len(), 9);
        assert_eq!(PoolOpKind::ALL.len(), 6);
        for (i, op) in MicroOpKind::ALL.iter().enumerate() {
            assert_eq!(op.index(), i);
            assert_eq!(op.name().parse::<MicroOpKind>().unwrap(), *op);
        }
        for (i, op) in PoolOpKind::ALL.iter().enumerate() {
            assert_eq!(op.index(), i);
        }
    }

    #[test]
    fn serde_names_match_display() {
        for op in MicroOpKind::ALL {
            assert_eq!(serde_json::to_string(&op).unwrap(), format!("\"{op}\""));
        }
        for op in PoolOpKind::ALL {
            assert_eq!(serde_json::to_string(&op).unwrap(), format!("\"{op}\""));
        }
    }
}
