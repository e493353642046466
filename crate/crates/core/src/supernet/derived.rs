//! The discrete network built from a genotype.

use std::cell::RefCell;

use crate::autodiff::{BatchStats, Binding, ParamId, ParamStore, Tape, Var};
use crate::error::{NetworkError, TensorError};
use crate::search_space::{build_templates, CellGene, CellTemplate, Genotype, Templates};
use crate::seed::{self, Rng};
use crate::tensor::{Real, Tensor};

use super::backbone::{Backbone, CellBody};
use super::config::{ChannelPlan, NetConfig};
use super::layers::{Ctx, OpLayer, RunningStats};
use super::search::Supernet;

/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm behaviour of a derived-network forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics (recorded for the running averages).
    Train,
    /// Stored running statistics.
    Eval,
}

/// A retained edge with its op weights.
#[derive(Clone, Debug)]
pub struct DerivedEdge {
    pub gene: CellGene,
    pub op: OpLayer,
}

#[derive(Clone, Debug)]
pub struct DerivedNet<T> {
    pub config: NetConfig,
    pub plan: ChannelPlan,
    pub templates: Templates,
    pub genotype: Genotype,
    pub params: ParamStore<T>,
    pub running: Vec<RunningStats<T>>,
    pub backbone: Backbone,
    pub cells: Vec<Vec<DerivedEdge>>,
    pub fusion: Vec<DerivedEdge>,
}

fn derived_edges<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut Rng,
    running: &mut Vec<RunningStats<T>>,
    prefix: &str,
    genes: &[CellGene],
    width: usize,
) -> Vec<DerivedEdge> {
    genes
        .iter()
        .map(|g| {
            let mut slots = running.len();
            let name = format!("{prefix}.{}_{}.{}", g.src, g.dst, g.op);
            let op = OpLayer::new(store, rng, &mut slots, &name, g.op, width);
            running.resize_with(slots, || RunningStats::new(width));
            DerivedEdge { gene: *g, op }
        })
        .collect()
}

struct DerivedBody<'a, T> {
    net: &'a DerivedNet<T>,
}

impl<T: Real> DerivedBody<'_, T> {
    fn cell(
        &self,
        ctx: &mut Ctx<'_, T>,
        template: &CellTemplate,
        edges: &[DerivedEdge],
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        let mut states = inputs.to_vec();
        for dst in template.intermediates() {
            let mut acc: Option<Var> = None;
            let mut count = 0usize;
            for edge in edges.iter().filter(|e| e.gene.dst == dst) {
                count += 1;
                let Some(y) = edge.op.forward(ctx, states[edge.gene.src])? else {
                    continue;
                };
                acc = Some(match acc {
                    Some(a) => ctx.tape.add(a, y)?,
                    None => y,
                });
            }
            let sum = acc.ok_or(TensorError::InvalidArgument {
                op: "derived node",
                reason: format!("node {dst} has no non-zero incoming edge"),
            })?;
            // Nodes average their retained edges.
            states.push(ctx.tape.scale(sum, T::lit(1.0 / count as f64))?);
        }
        ctx.tape.concat_channels(&states[inputs.len()..])
    }
}

impl<T: Real> CellBody<T> for DerivedBody<'_, T> {
    fn extraction(&self, ctx: &mut Ctx<'_, T>, cell: usize, inputs: [Var; 2]) -> Result<Var, TensorError> {
        self.cell(ctx, &self.net.templates.extraction, &self.net.cells[cell], &inputs)
    }

    fn fusion(&self, ctx: &mut Ctx<'_, T>, inputs: [Var; 3]) -> Result<Var, TensorError> {
        self.cell(ctx, &self.net.templates.fusion, &self.net.fusion, &inputs)
    }
}

impl<T: Real> DerivedNet<T> {
    /// Builds the network for `genotype` at size `config` (which may differ
    /// from the size the genotype was searched at).
    pub fn new(genotype: &Genotype, config: NetConfig, seed: u64) -> Result<Self, NetworkError> {
        let plan = ChannelPlan::new(&config)?;
        let templates = build_templates();
        genotype
            .validate(&templates)
            .map_err(|e| NetworkError::GenotypeMismatch(e.to_string()))?;
        let mut rng = seed::rng_for(seed, "derived-init");
        let mut params = ParamStore::new();
        let running = RefCell::new(Vec::new());
        let mut cells = Vec::new();
        let mut fusion = Vec::new();
        let backbone = Backbone::new(
            &mut params,
            &mut rng,
            &plan,
            |store, rng, i| {
                let prefix = format!("cells.{i}");
                let n = plan.node_width(i);
                cells.push(derived_edges(store, rng, &mut running.borrow_mut(), &prefix, &genotype.extraction, n));
            },
            |store, rng| {
                let n = plan.fusion_node_width;
                fusion = derived_edges(store, rng, &mut running.borrow_mut(), "fusion", &genotype.fusion, n);
            },
        );
        Ok(DerivedNet {
            config,
            plan,
            templates,
            genotype: genotype.clone(),
            params,
            running: running.into_inner(),
            backbone,
            cells,
            fusion,
        })
    }

    /// Copies shared weights from a supernet whose mixed ops act on all
    /// channels (`K = 1`) and has the same size.
    pub fn from_supernet(net: &Supernet<T>, genotype: &Genotype) -> Result<Self, NetworkError> {
        if net.config.k != 1 {
            return Err(NetworkError::Config(format!(
                "weight transfer needs full-channel mixed ops (K = 1), got K = {}",
                net.config.k
            )));
        }
        let mut out = Self::new(genotype, net.config, 0)?;
        let mut pairs: Vec<(ParamId, ParamId)> = net.backbone.params().into_iter().zip(out.backbone.params()).collect();
        let templates = net.templates.clone();
        let mut edge_pairs = |src: &[Vec<OpLayer>], dst: &[DerivedEdge], t: &CellTemplate| {
            for d in dst {
                let e = t.edge_index(d.gene.src, d.gene.dst).expect("validated genotype edge");
                let from = &src[e][d.gene.op.index()];
                pairs.extend(from.params().into_iter().zip(d.op.params()));
            }
        };
        for (s, d) in net.cells.iter().zip(&out.cells) {
            edge_pairs(s, d, &templates.extraction);
        }
        edge_pairs(&net.fusion, &out.fusion, &templates.fusion);
        for (from, to) in pairs {
            *out.params.get_mut(to) = net.params.get(from).clone();
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        binding: &Binding,
        image: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<(usize, BatchStats<T>)>), TensorError> {
        let body = DerivedBody { net: self };
        let mut ctx = match mode {
            Mode::Train => Ctx::train(tape, binding),
            Mode::Eval => Ctx::eval(tape, binding, &self.running),
        };
        let out = self.backbone.forward(&mut ctx, &self.plan, &body, image)?;
        Ok((out, ctx.take_stats()))
    }

    /// Folds recorded batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[(usize, BatchStats<T>)]) {
        for (slot, s) in stats {
            self.running[*slot].update(s, BN_MOMENTUM);
        }
    }

    /// Forward pass without gradients.
    pub fn predict(&self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let (y, _) = self.forward(&mut tape, &binding, x, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Names of the running-statistic buffers, parallel to `self.running`.
    pub fn running_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.running.len()];
        let edges = self.cells.iter().flatten().chain(&self.fusion);
        for norm in edges.filter_map(|e| e.op.norm()) {
            names[norm.slot] = norm.name.clone();
        }
        names
    }
}
