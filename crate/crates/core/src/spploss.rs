//! Scale-pyramid pooling loss.
//!
//! The estimate and the ground truth are each passed through the same
//! cascade of stride-2 poolings; the loss is the pixel-wise MSE at full
//! resolution plus the MSE at every pyramid level. During search each level
//! is a softmax-weighted mixture of the candidate poolings; after
//! derivation it is the single selected pooling.

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::search_space::PoolOpKind;
use crate::tensor::Real;

/// Number of pyramid levels below full resolution.
pub const LEVELS: usize = 3;

/// How each pyramid level pools the level above it.
#[derive(Clone, Copy, Debug)]
pub enum Pyramid<'a> {
    /// Per-level probability vectors over [`PoolOpKind::ALL`].
    Mixed(&'a [Var]),
    /// One fixed pooling per level.
    Fixed(&'a [PoolOpKind]),
}

impl Pyramid<'_> {
    fn levels(&self) -> usize {
        match self {
            Pyramid::Mixed(v) => v.len(),
            Pyramid::Fixed(v) => v.len(),
        }
    }
}

fn check_level<T: Real>(tape: &Tape<T>, x: Var) -> Result<(), TensorError> {
    let s = tape.shape(x);
    for size in [s.h, s.w] {
        if size < 2 || size % 2 != 0 {
            return Err(TensorError::PyramidLevelTooSmall { size, kernel: PoolOpKind::STRIDE });
        }
    }
    Ok(())
}

/// `Σ_o weights[o] * pool_o(x)` over the candidate poolings, each with
/// stride 2 and padding `(k - 2) / 2`, so every candidate halves the input.
pub fn mixed_pool_forward<T: Real>(tape: &mut Tape<T>, x: Var, weights: Var) -> Result<Var, TensorError> {
    check_level(tape, x)?;
    let mut terms = Vec::with_capacity(PoolOpKind::COUNT);
    for op in PoolOpKind::ALL {
        terms.push((tape.pool2d(x, op.kind(), op.kernel(), PoolOpKind::STRIDE)?, op.index()));
    }
    tape.weighted_sum(&terms, weights)
}

fn pool_level<T: Real>(tape: &mut Tape<T>, x: Var, pyramid: Pyramid<'_>, level: usize) -> Result<Var, TensorError> {
    match pyramid {
        Pyramid::Mixed(w) => mixed_pool_forward(tape, x, w[level]),
        Pyramid::Fixed(ops) => {
            check_level(tape, x)?;
            let op = ops[level];
            tape.pool2d(x, op.kind(), op.kernel(), PoolOpKind::STRIDE)
        }
    }
}

/// `mse(E, G) + Σ_l mse(P_l(E), P_l(G))`, where `P_l` applies the first `l`
/// pyramid levels in cascade. Each term is a mean over its level's pixels.
pub fn spp_loss<T: Real>(tape: &mut Tape<T>, est: Var, gt: Var, pyramid: Pyramid<'_>) -> Result<Var, TensorError> {
    if pyramid.levels() != LEVELS {
        return Err(TensorError::InvalidArgument {
            op: "spp_loss",
            reason: format!("expected {LEVELS} pyramid levels, got {}", pyramid.levels()),
        });
    }
    let mut loss = tape.mse(est, gt)?;
    let (mut e, mut g) = (est, gt);
    for level in 0..LEVELS {
        e = pool_level(tape, e, pyramid, level)?;
        g = pool_level(tape, g, pyramid, level)?;
        let term = tape.mse(e, g)?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn identical_maps_have_zero_loss() {
        let mut tape = Tape::<f64>::new();
        let t = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, h, w| (h * 8 + w) as f64);
        let a = tape.constant(t.clone());
        let b = tape.constant(t);
        let ops = [PoolOpKind::Max2, PoolOpKind::Avg4, PoolOpKind::Avg6];
        let l = spp_loss(&mut tape, a, b, Pyramid::Fixed(&ops)).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn constant_offset_counts_every_level_for_avg() {
        // Average pooling preserves a constant offset, so every level
        // contributes the same squared error.
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(Shape::new(1, 1, 16, 16), 1.0));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 1, 16, 16)));
        let avg = [PoolOpKind::Avg2, PoolOpKind::Avg4, PoolOpKind::Avg6];
        assert!(avg.iter().all(|p| p.kind() == crate::autodiff::PoolKind::Avg));
        let l = spp_loss(&mut tape, a, b, Pyramid::Fixed(&avg)).unwrap();
        assert!((tape.value(l).item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_small_input_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 1, 4, 4)));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 1, 4, 4)));
        let ops = [PoolOpKind::Max2; 3];
        let err = spp_loss(&mut tape, a, b, Pyramid::Fixed(&ops)).unwrap_err();
        assert!(err.to_string().contains("pyramid level too small"));
    }
}
