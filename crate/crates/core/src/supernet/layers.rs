//! Parameterized building blocks shared by the supernet and derived networks.

use rand::Rng as _;

use crate::autodiff::{BatchStats, Binding, ConvGeom, ParamId, ParamStore, Tape, Var, BN_EPS};
use crate::error::TensorError;
use crate::search_space::MicroOpKind;
use crate::seed::Rng;
use crate::tensor::{Real, Shape, Tensor};

/// A convolution's weight, optional bias and geometry.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    /// Adds a stride-1, size-preserving convolution initialized with
    /// Xavier-uniform weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let shape = Shape::new(cout, cin / groups, kernel, kernel);
        let fan_in = (cin / groups) * kernel * kernel;
        let fan_out = (cout / groups) * kernel * kernel;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::from_vec(shape, data).expect("conv weight shape"),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(cout))));
        Conv {
            weight,
            bias,
            geom: ConvGeom::same(kernel, dilation).with_groups(groups),
        }
    }

    pub fn pointwise<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(store, rng, name, cin, cout, 1, 1, 1, true)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = ctx.binding.var(self.weight);
        let b = self.bias.map(|b| ctx.binding.var(b));
        ctx.tape.conv2d(x, w, b, self.geom)
    }

    /// ReLU followed by the convolution.
    pub fn relu_forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, TensorError> {
        let r = ctx.tape.relu(x)?;
        self.forward(ctx, r)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Batch norm with a learnable per-channel affine. `slot` indexes the
/// network's running-statistics table.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub slot: usize,
    pub name: String,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, slots: &mut usize, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(Shape::vector(channels), T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(Shape::vector(channels)));
        let slot = *slots;
        *slots += 1;
        Norm {
            gamma,
            beta,
            slot,
            name: name.to_string(),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var, TensorError> {
        let g = ctx.binding.var(self.gamma);
        let b = ctx.binding.var(self.beta);
        let eps = T::lit(BN_EPS);
        match &mut ctx.norm {
            NormMode::Batch(collected) => {
                let (y, stats) = ctx.tape.batch_norm(x, g, b, eps)?;
                collected.push((self.slot, stats));
                Ok(y)
            }
            NormMode::Running(table) => {
                let rs = &table[self.slot];
                ctx.tape.batch_norm_frozen(x, g, b, &rs.mean, &rs.var, eps)
            }
        }
    }
}

/// Running mean and (unbiased) variance of one batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Exponential update with the given momentum.
    pub fn update(&mut self, stats: &BatchStats<T>, momentum: f64) {
        let m = T::lit(momentum);
        let keep = T::one() - m;
        let unbias = if stats.count > 1 {
            T::lit(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &s) in self.mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * s;
        }
        for (r, &s) in self.var.iter_mut().zip(&stats.var) {
            *r = keep * *r + m * s * unbias;
        }
    }
}

/// Batch-norm statistics source for a forward pass.
pub enum NormMode<'a, T> {
    /// Normalize with batch statistics and record them per slot.
    Batch(Vec<(usize, BatchStats<T>)>),
    /// Normalize with stored running statistics.
    Running(&'a [RunningStats<T>]),
}

/// Everything a forward pass threads through the layers.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub binding: &'a Binding,
    pub norm: NormMode<'a, T>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn train(tape: &'a mut Tape<T>, binding: &'a Binding) -> Self {
        Ctx {
            tape,
            binding,
            norm: NormMode::Batch(Vec::new()),
        }
    }

    pub fn eval(tape: &'a mut Tape<T>, binding: &'a Binding, running: &'a [RunningStats<T>]) -> Self {
        Ctx {
            tape,
            binding,
            norm: NormMode::Running(running),
        }
    }

    /// Batch statistics recorded so far (empty in running mode).
    pub fn take_stats(&mut self) -> Vec<(usize, BatchStats<T>)> {
        match &mut self.norm {
            NormMode::Batch(v) => std::mem::take(v),
            NormMode::Running(_) => Vec::new(),
        }
    }
}

/// Weights of one candidate op at a fixed channel width.
#[derive(Clone, Debug)]
pub enum OpLayer {
    /// ReLU, dense convolution, batch norm.
    Conv { conv: Conv, norm: Norm },
    /// ReLU, depthwise convolution, pointwise convolution, batch norm.
    Separable { depthwise: Conv, pointwise: Conv, norm: Norm },
    Skip,
    Zero,
}

impl OpLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        slots: &mut usize,
        name: &str,
        op: MicroOpKind,
        n: usize,
    ) -> Self {
        match op {
            MicroOpKind::Skip => OpLayer::Skip,
            MicroOpKind::Zero => OpLayer::Zero,
            _ if op.is_separable() => {
                let (k, d) = op.kernel().expect("separable kernel");
                let depthwise = Conv::new(store, rng, &format!("{name}.dw"), n, n, k, d, n, false);
                let pointwise = Conv::new(store, rng, &format!("{name}.pw"), n, n, 1, 1, 1, false);
                let norm = Norm::new(store, slots, &format!("{name}.bn"), n);
                OpLayer::Separable {
                    depthwise,
                    pointwise,
                    norm,
                }
            }
            _ => {
                let (k, d) = op.kernel().expect("conv kernel");
                let conv = Conv::new(store, rng, &format!("{name}.conv"), n, n, k, d, 1, false);
                let norm = Norm::new(store, slots, &format!("{name}.bn"), n);
                OpLayer::Conv { conv, norm }
            }
        }
    }

    /// Output of the op, or `None` for the zero op (which contributes nothing).
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Option<Var>, TensorError> {
        Ok(match self {
            OpLayer::Skip => Some(x),
            OpLayer::Zero => None,
            OpLayer::Conv { conv, norm } => {
                let y = conv.relu_forward(ctx, x)?;
                Some(norm.forward(ctx, y)?)
            }
            OpLayer::Separable {
                depthwise,
                pointwise,
                norm,
            } => {
                let y = depthwise.relu_forward(ctx, x)?;
                let y = pointwise.forward(ctx, y)?;
                Some(norm.forward(ctx, y)?)
            }
        })
    }

    /// Parameters in a fixed order, for copying between networks.
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            OpLayer::Skip | OpLayer::Zero => Vec::new(),
            OpLayer::Conv { conv, norm } => {
                let mut v = conv.params();
                v.extend([norm.gamma, norm.beta]);
                v
            }
            OpLayer::Separable {
                depthwise,
                pointwise,
                norm,
            } => {
                let mut v = depthwise.params();
                v.extend(pointwise.params());
                v.extend([norm.gamma, norm.beta]);
                v
            }
        }
    }

    pub fn norm(&self) -> Option<&Norm> {
        match self {
            OpLayer::Conv { norm, .. } | OpLayer::Separable { norm, .. } => Some(norm),
            _ => None,
        }
    }
}
