use crate::error::NetworkError;
use crate::supernet::{ChannelPlan, NetConfig};

use super::genotype::Genotype;
use super::ops::MicroOpKind;

/// Learnable parameters of one candidate op acting on `n` channels.
///
/// Every convolutional op is ReLU, bias-free convolution(s), then a batch
/// norm with a per-channel scale and shift. Dilated ops are dense `k x k`
/// convolutions; separable ops are a depthwise `k x k` followed by a
/// pointwise 1x1 convolution sharing one batch norm.
pub fn op_params(op: MicroOpKind, n: usize) -> usize {
    let bn = 2 * n;
    match op {
        MicroOpKind::Conv1x1 => n * n + bn,
        MicroOpKind::Dilated3 | MicroOpKind::Dilated5 | MicroOpKind::Dilated7 => {
            let (k, _) = op.kernel().expect("dilated kernel");
            k * k * n * n + bn
        }
        MicroOpKind::Sep3 | MicroOpKind::Sep5 | MicroOpKind::Sep7 => {
            let (k, _) = op.kernel().expect("separable kernel");
            k * k * n + n * n + bn
        }
        MicroOpKind::Skip | MicroOpKind::Zero => 0,
    }
}

/// 1x1 convolution with bias.
fn pointwise(cin: usize, cout: usize) -> usize {
    cin * cout + cout
}

/// 3x3 convolution with bias.
fn conv3(cin: usize, cout: usize) -> usize {
    9 * cin * cout + cout
}

/// Learnable parameters of the network derived from `genotype` at the given
/// size. Batch-norm running statistics are buffers, not parameters.
pub fn count_params(genotype: &Genotype, cfg: &NetConfig) -> Result<usize, NetworkError> {
    let plan = ChannelPlan::new(cfg)?;
    let mut total = pointwise(3, plan.stem_width());
    for (i, &w) in plan.cell_widths.iter().enumerate() {
        let n = plan.node_width(i);
        total += 2 * pointwise(w, n);
        total += genotype.extraction.iter().map(|g| op_params(g.op, n)).sum::<usize>();
        if plan.transitions.contains(&i) {
            total += pointwise(w, 2 * w);
        }
    }
    let f = plan.fusion_node_width;
    total += plan.tap_widths.iter().map(|&w| pointwise(w, f)).sum::<usize>();
    total += genotype.fusion.iter().map(|g| op_params(g.op, f)).sum::<usize>();
    let fused = plan.fusion_width();
    total += conv3(fused, fused / 2) + conv3(fused / 2, 1);
    Ok(total)
}
