//! The continuously relaxed supernet.

use rand::seq::index;

use crate::autodiff::{BatchStats, ChannelMask, ParamStore, Tape, Var};
use crate::error::{NetworkError, TensorError};
use crate::search_space::{build_templates, CellTemplate, MicroOpKind, Templates};
use crate::seed::{self, Rng};
use crate::tensor::{Real, Tensor};

use super::arch::ArchVars;
use super::backbone::{Backbone, CellBody};
use super::config::{ChannelPlan, NetConfig};
use super::layers::{Ctx, OpLayer};

/// Every candidate op of one edge, indexed by [`MicroOpKind::index`].
pub type MixedOp = Vec<OpLayer>;

/// Draws a mask selecting `selected` of `channels` channels uniformly.
pub fn draw_mask(rng: &mut Rng, channels: usize, selected: usize) -> ChannelMask {
    if selected >= channels {
        return ChannelMask::full(channels);
    }
    let mut idx = index::sample(rng, channels, selected).into_vec();
    idx.sort_unstable();
    ChannelMask::from_indices(channels, &idx)
}

/// Partial-channel mixed op: the `mask`-selected channels pass through the
/// op mixture weighted by `weights` (a probability vector over
/// [`MicroOpKind::ALL`]); the remaining channels are passed through
/// unchanged and restored to their original positions.
pub fn mixed_op_forward<T: Real>(
    ctx: &mut Ctx<'_, T>,
    ops: &[OpLayer],
    x: Var,
    weights: Var,
    mask: &ChannelMask,
) -> Result<Var, TensorError> {
    let (sel, bypass) = ctx.tape.channel_mask_split(x, mask)?;
    let mut terms = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        if let Some(y) = op.forward(ctx, sel)? {
            terms.push((y, i));
        }
    }
    let mixed = ctx.tape.weighted_sum(&terms, weights)?;
    ctx.tape.channel_mask_merge(mixed, bypass, mask)
}

/// Intermediate node: the edge outputs weighted by the node's normalized
/// edge weights `beta` (one per incoming edge, in source order).
pub fn node_forward<T: Real>(tape: &mut Tape<T>, edges: &[Var], beta: Var) -> Result<Var, TensorError> {
    let terms: Vec<(Var, usize)> = edges.iter().copied().zip(0..).collect();
    tape.weighted_sum(&terms, beta)
}

/// The supernet: every edge of every cell carries all candidate ops.
#[derive(Clone, Debug)]
pub struct Supernet<T> {
    pub config: NetConfig,
    pub plan: ChannelPlan,
    pub templates: Templates,
    pub params: ParamStore<T>,
    pub backbone: Backbone,
    /// `cells[i][e]`: mixed op on edge `e` of extraction cell `i`.
    pub cells: Vec<Vec<MixedOp>>,
    pub fusion: Vec<MixedOp>,
}

fn mixed_ops<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    slots: &mut usize,
    prefix: &str,
    template: &CellTemplate,
    width: usize,
) -> Vec<MixedOp> {
    template
        .edges
        .iter()
        .map(|e| {
            MicroOpKind::ALL
                .iter()
                .map(|&op| OpLayer::new(store, rng, slots, &format!("{prefix}.{}_{}.{op}", e.src, e.dst), op, width))
                .collect()
        })
        .collect()
}

struct SearchBody<'a, T> {
    net: &'a Supernet<T>,
    arch: &'a ArchVars,
    rng: std::cell::RefCell<&'a mut Rng>,
}

impl<T: Real> SearchBody<'_, T> {
    fn cell(
        &self,
        ctx: &mut Ctx<'_, T>,
        template: &CellTemplate,
        ops: &[MixedOp],
        inputs: &[Var],
        alpha: &[Var],
        beta: &[Var],
    ) -> Result<Var, TensorError> {
        let mut states = inputs.to_vec();
        for (k, dst) in template.intermediates().into_iter().enumerate() {
            let mut outs = Vec::new();
            for e in template.incoming(dst) {
                let x = states[template.edges[e].src];
                let width = ctx.tape.shape(x).c;
                let mask = draw_mask(&mut self.rng.borrow_mut(), width, self.net.config.partial_width(width));
                outs.push(mixed_op_forward(ctx, &ops[e], x, alpha[e], &mask)?);
            }
            states.push(node_forward(ctx.tape, &outs, beta[k])?);
        }
        ctx.tape.concat_channels(&states[inputs.len()..])
    }
}

impl<T: Real> CellBody<T> for SearchBody<'_, T> {
    fn extraction(&self, ctx: &mut Ctx<'_, T>, cell: usize, inputs: [Var; 2]) -> Result<Var, TensorError> {
        self.cell(
            ctx,
            &self.net.templates.extraction,
            &self.net.cells[cell],
            &inputs,
            &self.arch.alpha_e,
            &self.arch.beta_e,
        )
    }

    fn fusion(&self, ctx: &mut Ctx<'_, T>, inputs: [Var; 3]) -> Result<Var, TensorError> {
        self.cell(
            ctx,
            &self.net.templates.fusion,
            &self.net.fusion,
            &inputs,
            &self.arch.alpha_d,
            &self.arch.beta_d,
        )
    }
}

impl<T: Real> Supernet<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self, NetworkError> {
        let plan = ChannelPlan::new(&config)?;
        let templates = build_templates();
        let mut rng = seed::rng_for(seed, "supernet-init");
        let mut params = ParamStore::new();
        // The supernet keeps no running statistics, so slot numbers are unused.
        let (mut cell_slots, mut fusion_slots) = (0, 0);
        let mut cells = Vec::new();
        let mut fusion = Vec::new();
        let backbone = Backbone::new(
            &mut params,
            &mut rng,
            &plan,
            |store, rng, i| {
                let width = config.partial_width(plan.node_width(i));
                cells.push(mixed_ops(store, rng, &mut cell_slots, &format!("cells.{i}"), &templates.extraction, width));
            },
            |store, rng| {
                let width = config.partial_width(plan.fusion_node_width);
                fusion = mixed_ops(store, rng, &mut fusion_slots, "fusion", &templates.fusion, width);
            },
        );
        Ok(Supernet {
            config,
            plan,
            templates,
            params,
            backbone,
            cells,
            fusion,
        })
    }

    /// Density estimate for `image`, drawing fresh channel masks from `rng`.
    /// Batch norms use batch statistics, which are returned per slot.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        binding: &crate::autodiff::Binding,
        arch: &ArchVars,
        image: Var,
        rng: &mut Rng,
    ) -> Result<(Var, Vec<(usize, BatchStats<T>)>), TensorError> {
        let body = SearchBody {
            net: self,
            arch,
            rng: std::cell::RefCell::new(rng),
        };
        let mut ctx = Ctx::train(tape, binding);
        let out = self.backbone.forward(&mut ctx, &self.plan, &body, image)?;
        Ok((out, ctx.take_stats()))
    }

    /// Convenience: binds weights and architecture on a fresh tape and runs
    /// a forward pass without gradients.
    pub fn predict(
        &self,
        arch: &super::arch::ArchStore<T>,
        image: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape, false);
        let vars = arch.bind(&mut tape, false)?;
        let x = tape.constant(image.clone());
        let (y, _) = self.forward(&mut tape, &binding, &vars, x, rng)?;
        Ok(tape.value(y).clone())
    }
}
