//! Fixed (non-searched) layers around the searchable cells.

use crate::autodiff::{ParamId, ParamStore, PoolKind, Var};
use crate::error::TensorError;
use crate::seed::Rng;
use crate::tensor::Real;

use super::config::{ChannelPlan, TapSource};
use super::layers::{Conv, Ctx};

/// Stem, per-cell input adjusters, downsampling transitions, tap
/// projections and the density head.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: Conv,
    /// Two adjusters per extraction cell mapping its inputs to node width.
    pub adjust: Vec<[Conv; 2]>,
    pub transitions: [Conv; 2],
    pub projections: [Conv; 3],
    pub head: [Conv; 2],
}

/// Hooks for evaluating the searchable cells inside [`Backbone::forward`].
pub trait CellBody<T: Real> {
    /// Extraction cell `cell` on its two adjusted inputs.
    fn extraction(&self, ctx: &mut Ctx<'_, T>, cell: usize, inputs: [Var; 2]) -> Result<Var, TensorError>;
    /// Fusion cell on the three projected, upsampled taps.
    fn fusion(&self, ctx: &mut Ctx<'_, T>, inputs: [Var; 3]) -> Result<Var, TensorError>;
}

impl Backbone {
    /// Creates the stem and the per-cell adjusters and transitions.
    /// `cell_ops` is called after each cell's adjusters so that a cell's
    /// parameters are contiguous in the store.
    pub fn new_encoder<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        plan: &ChannelPlan,
        mut cell_ops: impl FnMut(&mut ParamStore<T>, &mut Rng, usize),
    ) -> (Conv, Vec<[Conv; 2]>, Vec<Conv>) {
        let stem = Conv::pointwise(store, rng, "stem", 3, plan.stem_width());
        let mut adjust = Vec::new();
        let mut transitions = Vec::new();
        for (i, &w) in plan.cell_widths.iter().enumerate() {
            let n = plan.node_width(i);
            adjust.push([
                Conv::pointwise(store, rng, &format!("cells.{i}.adjust0"), w, n),
                Conv::pointwise(store, rng, &format!("cells.{i}.adjust1"), w, n),
            ]);
            cell_ops(store, rng, i);
            if plan.transitions.contains(&i) {
                let t = transitions.len();
                transitions.push(Conv::pointwise(store, rng, &format!("transitions.{t}"), w, 2 * w));
            }
        }
        (stem, adjust, transitions)
    }

    /// Creates the tap projections, then `fusion_ops`, then the head.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        plan: &ChannelPlan,
        cell_ops: impl FnMut(&mut ParamStore<T>, &mut Rng, usize),
        fusion_ops: impl FnOnce(&mut ParamStore<T>, &mut Rng),
    ) -> Self {
        let (stem, adjust, transitions) = Self::new_encoder(store, rng, plan, cell_ops);
        let f = plan.fusion_node_width;
        let projections = [0, 1, 2].map(|j| {
            Conv::pointwise(store, rng, &format!("projections.{j}"), plan.tap_widths[j], f)
        });
        fusion_ops(store, rng);
        let fused = plan.fusion_width();
        let head = [
            Conv::new(store, rng, "head.0", fused, fused / 2, 3, 1, 1, true),
            Conv::new(store, rng, "head.1", fused / 2, 1, 3, 1, 1, true),
        ];
        let transitions = [transitions[0].clone(), transitions[1].clone()];
        Backbone {
            stem,
            adjust,
            transitions,
            projections,
            head,
        }
    }

    /// Every backbone parameter in a fixed structural order.
    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.stem.params();
        for [a, b] in &self.adjust {
            v.extend(a.params());
            v.extend(b.params());
        }
        for c in self.transitions.iter().chain(&self.projections).chain(&self.head) {
            v.extend(c.params());
        }
        v
    }

    /// Maps an `N x 3 x H x W` image batch to an `N x 1 x H x W` density map.
    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        plan: &ChannelPlan,
        body: &dyn CellBody<T>,
        image: Var,
    ) -> Result<Var, TensorError> {
        let shape = ctx.tape.shape(image);
        if shape.c != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "network input",
                dim: "channels",
                expected: 3,
                found: shape.c,
            });
        }
        let factor = ChannelPlan::DEPTH_FACTOR;
        if shape.h % factor != 0 || shape.w % factor != 0 {
            return Err(TensorError::InvalidArgument {
                op: "network input",
                reason: format!("spatial size {}x{} must be a multiple of {factor}", shape.h, shape.w),
            });
        }
        let mut prev = self.stem.forward(ctx, image)?;
        let mut prev_prev = prev;
        let mut outputs = Vec::with_capacity(plan.cell_widths.len());
        let mut transition_out = Vec::with_capacity(2);
        for i in 0..plan.cell_widths.len() {
            if plan.resets_history(i) {
                prev_prev = prev;
            }
            let a = self.adjust[i][0].relu_forward(ctx, prev_prev)?;
            let b = self.adjust[i][1].relu_forward(ctx, prev)?;
            let out = body.extraction(ctx, i, [a, b])?;
            outputs.push(out);
            prev_prev = prev;
            prev = out;
            if let Some(t) = plan.transitions.iter().position(|&c| c == i) {
                let y = self.transitions[t].relu_forward(ctx, out)?;
                let y = ctx.tape.pool2d(y, PoolKind::Max, 2, 2)?;
                transition_out.push(y);
                prev = y;
                prev_prev = y;
            }
        }
        let mut taps = [prev; 3];
        for (j, src) in plan.taps.iter().enumerate() {
            let feat = match *src {
                TapSource::Cell(c) => outputs[c],
                TapSource::Transition => transition_out[1],
            };
            let p = self.projections[j].relu_forward(ctx, feat)?;
            let up = 1 << j;
            taps[j] = if up > 1 { ctx.tape.upsample_nearest(p, up)? } else { p };
        }
        let fused = body.fusion(ctx, taps)?;
        let h = self.head[0].relu_forward(ctx, fused)?;
        self.head[1].relu_forward(ctx, h)
    }
}
