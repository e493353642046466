use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::TensorError;
use crate::tensor::{Real, Shape, Tensor};

use super::conv::{self, ConvGeom};
use super::pool::{self, PoolGeom, PoolKind};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx as usize
    }
}

/// Boolean channel selection used for partial channel connections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMask {
    selected: Vec<bool>,
}

impl ChannelMask {
    pub fn new(selected: Vec<bool>) -> Self {
        ChannelMask { selected }
    }

    pub fn full(channels: usize) -> Self {
        ChannelMask {
            selected: vec![true; channels],
        }
    }

    pub fn from_indices(channels: usize, indices: &[usize]) -> Self {
        let mut selected = vec![false; channels];
        for &i in indices {
            selected[i] = true;
        }
        ChannelMask { selected }
    }

    pub fn channels(&self) -> usize {
        self.selected.len()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn is_full(&self) -> bool {
        self.selected.iter().all(|&s| s)
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.selected.len()).filter(|&i| self.selected[i]).collect()
    }

    pub fn bypassed(&self) -> Vec<usize> {
        (0..self.selected.len()).filter(|&i| !self.selected[i]).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.selected
    }
}

/// Per-channel statistics of a batch-normalized input.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements per channel the statistics were computed over.
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    Pool {
        x: usize,
        kind: PoolKind,
        geom: PoolGeom,
        argmax: Vec<usize>,
    },
    Upsample {
        x: usize,
        factor: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: T,
    },
    Relu {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    WeightedSum {
        terms: Vec<(usize, usize)>,
        weights: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Gather {
        x: usize,
        channels: Vec<usize>,
    },
    Merge {
        sel: usize,
        bypass: Option<usize>,
        mask: Vec<bool>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    FrozenNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Mse {
        a: usize,
        b: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recording of primitive applications in topological (recording) order.
///
/// Backward walks the nodes in exact reverse order, so gradients are
/// deterministic for a fixed recording.
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index()).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<(), TensorError> {
    let dims = [
        ("batch", a.n, b.n),
        ("channels", a.c, b.c),
        ("height", a.h, b.h),
        ("width", a.w, b.w),
    ];
    for (dim, expected, found) in dims {
        if expected != found {
            return Err(TensorError::ShapeMismatch {
                op,
                dim,
                expected,
                found,
            });
        }
    }
    Ok(())
}

fn channel_sums<T: Real>(t: &Tensor<T>) -> Vec<T> {
    let s = t.shape();
    let mut sums = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, acc) in sums.iter_mut().enumerate() {
            *acc += t.plane(n, c).iter().copied().sum::<T>();
        }
    }
    sums
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { tape: self.id, idx }
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index())
    }

    fn grad_of(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.check(v).expect("variable from another tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v)
            .map(|i| self.nodes[i].requires_grad)
            .unwrap_or(false)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        let wi = self.check(w)?;
        let bi = b.map(|b| self.check(b)).transpose()?;
        let out = conv::conv2d_forward(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|b| &self.nodes[b].value),
            geom,
        )?;
        let mut deps = vec![xi, wi];
        deps.extend(bi);
        let rg = self.grad_of(&deps);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
                geom,
            },
        ))
    }

    /// Stride-`stride` pooling with padding `(k - stride) / 2`.
    pub fn pool2d(
        &mut self,
        x: Var,
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        let geom = PoolGeom::new(kernel, stride)?;
        let (out, argmax) = pool::pool2d_forward(&self.nodes[xi].value, kind, geom)?;
        let rg = self.nodes[xi].requires_grad;
        // argmax is only needed for the backward pass
        let argmax = if rg { argmax } else { Vec::new() };
        Ok(self.push(
            out,
            rg,
            Op::Pool {
                x: xi,
                kind,
                geom,
                argmax,
            },
        ))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        if factor < 2 {
            return Err(TensorError::UpsampleFactor(factor));
        }
        let out = pool::upsample_forward(&self.nodes[xi].value, factor);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, rg, Op::Upsample { x: xi, factor }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        same_shape("add", self.nodes[ai].value.shape(), self.nodes[bi].value.shape())?;
        let mut out = self.nodes[ai].value.clone();
        out.add_assign(&self.nodes[bi].value);
        let rg = self.grad_of(&[ai, bi]);
        Ok(self.push(out, rg, Op::Add { a: ai, b: bi }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.map(|v| v * factor);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, rg, Op::Scale { x: xi, factor }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.map(|v| v.max(T::zero()));
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, rg, Op::Relu { x: xi }))
    }

    /// Softmax over every element of `v` (treated as one flat vector).
    pub fn softmax(&mut self, v: Var) -> Result<Var, TensorError> {
        let vi = self.check(v)?;
        let x = &self.nodes[vi].value;
        let max = x.data().iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = x.data().iter().map(|&a| (a - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let out = Tensor::from_vec(x.shape(), exps.into_iter().map(|e| e / total).collect())?;
        let rg = self.nodes[vi].requires_grad;
        Ok(self.push(out, rg, Op::Softmax { x: vi }))
    }

    /// `Σ weights[j] * x` over `(x, j)` terms; weight indices may skip entries.
    pub fn weighted_sum(&mut self, terms: &[(Var, usize)], weights: Var) -> Result<Var, TensorError> {
        let wi = self.check(weights)?;
        let first = terms.first().ok_or(TensorError::InvalidArgument {
            op: "weighted_sum",
            reason: "no terms".into(),
        })?;
        let shape = self.shape(first.0);
        let nweights = self.nodes[wi].value.numel();
        let mut idx = Vec::with_capacity(terms.len());
        for &(x, j) in terms {
            let xi = self.check(x)?;
            same_shape("weighted_sum", shape, self.nodes[xi].value.shape())?;
            if j >= nweights {
                return Err(TensorError::InvalidArgument {
                    op: "weighted_sum",
                    reason: format!("weight index {j} out of {nweights}"),
                });
            }
            idx.push((xi, j));
        }
        let mut out = Tensor::zeros(shape);
        {
            let wv = self.nodes[wi].value.data();
            let od = out.data_mut();
            for &(xi, j) in &idx {
                let c = wv[j];
                for (o, &v) in od.iter_mut().zip(self.nodes[xi].value.data()) {
                    *o += c * v;
                }
            }
        }
        let mut deps: Vec<usize> = idx.iter().map(|t| t.0).collect();
        deps.push(wi);
        let rg = self.grad_of(&deps);
        Ok(self.push(
            out,
            rg,
            Op::WeightedSum {
                terms: idx,
                weights: wi,
            },
        ))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = xs.first().ok_or(TensorError::InvalidArgument {
            op: "concat_channels",
            reason: "no inputs".into(),
        })?;
        let s0 = self.shape(*first);
        let mut idx = Vec::with_capacity(xs.len());
        let mut channels = 0;
        for &x in xs {
            let xi = self.check(x)?;
            let s = self.nodes[xi].value.shape();
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                same_shape(
                    "concat_channels",
                    Shape::new(s0.n, s.c, s0.h, s0.w),
                    s,
                )?;
            }
            channels += s.c;
            idx.push(xi);
        }
        let os = Shape::new(s0.n, channels, s0.h, s0.w);
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..s0.n {
            for &xi in &idx {
                let v = &self.nodes[xi].value;
                for c in 0..v.shape().c {
                    data.extend_from_slice(v.plane(n, c));
                }
            }
        }
        let out = Tensor::from_vec(os, data)?;
        let rg = self.grad_of(&idx);
        Ok(self.push(out, rg, Op::Concat { xs: idx }))
    }

    pub fn gather_channels(&mut self, x: Var, channels: &[usize]) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        if channels.is_empty() {
            return Err(TensorError::EmptyMask);
        }
        let xs = self.nodes[xi].value.shape();
        if let Some(&bad) = channels.iter().find(|&&c| c >= xs.c) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_channels",
                dim: "channel index",
                expected: xs.c,
                found: bad,
            });
        }
        let os = Shape::new(xs.n, channels.len(), xs.h, xs.w);
        let mut data = Vec::with_capacity(os.numel());
        let v = &self.nodes[xi].value;
        for n in 0..xs.n {
            for &c in channels {
                data.extend_from_slice(v.plane(n, c));
            }
        }
        let out = Tensor::from_vec(os, data)?;
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(
            out,
            rg,
            Op::Gather {
                x: xi,
                channels: channels.to_vec(),
            },
        ))
    }

    /// Splits `x` into (selected, bypass) channel groups. The bypass part is
    /// `None` when every channel is selected.
    pub fn channel_mask_split(
        &mut self,
        x: Var,
        mask: &ChannelMask,
    ) -> Result<(Var, Option<Var>), TensorError> {
        let c = self.shape(x).c;
        if mask.channels() != c {
            return Err(TensorError::ShapeMismatch {
                op: "channel_mask_split",
                dim: "mask length",
                expected: c,
                found: mask.channels(),
            });
        }
        if mask.count() == 0 {
            return Err(TensorError::EmptyMask);
        }
        if mask.is_full() {
            return Ok((x, None));
        }
        let sel = self.gather_channels(x, &mask.selected())?;
        let bypass = self.gather_channels(x, &mask.bypassed())?;
        Ok((sel, Some(bypass)))
    }

    /// Inverse of [`Tape::channel_mask_split`]: restores original channel order.
    pub fn channel_mask_merge(
        &mut self,
        sel: Var,
        bypass: Option<Var>,
        mask: &ChannelMask,
    ) -> Result<Var, TensorError> {
        let si = self.check(sel)?;
        let ss = self.nodes[si].value.shape();
        if ss.c != mask.count() {
            return Err(TensorError::MaskCardinality {
                expected: mask.count(),
                found: ss.c,
            });
        }
        let Some(bypass) = bypass else {
            if !mask.is_full() {
                return Err(TensorError::InvalidArgument {
                    op: "channel_mask_merge",
                    reason: "partial mask without bypass channels".into(),
                });
            }
            return Ok(sel);
        };
        let bi = self.check(bypass)?;
        let bs = self.nodes[bi].value.shape();
        same_shape(
            "channel_mask_merge",
            Shape::new(ss.n, mask.channels() - mask.count(), ss.h, ss.w),
            bs,
        )?;
        let os = Shape::new(ss.n, mask.channels(), ss.h, ss.w);
        let mut data = Vec::with_capacity(os.numel());
        {
            let sv = &self.nodes[si].value;
            let bv = &self.nodes[bi].value;
            for n in 0..ss.n {
                let (mut s, mut b) = (0, 0);
                for &m in mask.as_slice() {
                    if m {
                        data.extend_from_slice(sv.plane(n, s));
                        s += 1;
                    } else {
                        data.extend_from_slice(bv.plane(n, b));
                        b += 1;
                    }
                }
            }
        }
        let out = Tensor::from_vec(os, data)?;
        let rg = self.grad_of(&[si, bi]);
        Ok(self.push(
            out,
            rg,
            Op::Merge {
                sel: si,
                bypass: Some(bi),
                mask: mask.as_slice().to_vec(),
            },
        ))
    }

    fn check_affine(&self, x: usize, gamma: usize, beta: usize) -> Result<(), TensorError> {
        let c = self.nodes[x].value.shape().c;
        for (dim, i) in [("gamma length", gamma), ("beta length", beta)] {
            let found = self.nodes[i].value.numel();
            if found != c {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    dim,
                    expected: c,
                    found,
                });
            }
        }
        Ok(())
    }

    fn normalize_with(
        &mut self,
        xi: usize,
        gi: usize,
        bi: usize,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let x = &self.nodes[xi].value;
        let s = x.shape();
        let gamma = self.nodes[gi].value.data();
        let beta = self.nodes[bi].value.data();
        let mut xhat = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * p;
                let src = x.plane(n, c);
                let xh = &mut xhat.data_mut()[off..off + p];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - mean[c]) * inv_std[c];
                }
                let o = &mut out.data_mut()[off..off + p];
                for (d, &v) in o.iter_mut().zip(xhat.plane(n, c)) {
                    *d = gamma[c] * v + beta[c];
                }
            }
        }
        (xhat, out)
    }

    /// Per-channel normalization with batch statistics and a learnable affine.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>), TensorError> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        self.check_affine(xi, gi, bi)?;
        let xs = self.nodes[xi].value.shape();
        let count = xs.n * xs.plane();
        let cnt = T::lit(count as f64);
        let mean: Vec<T> = channel_sums(&self.nodes[xi].value)
            .into_iter()
            .map(|s| s / cnt)
            .collect();
        let mut var = vec![T::zero(); xs.c];
        for n in 0..xs.n {
            for (c, acc) in var.iter_mut().enumerate() {
                for &v in self.nodes[xi].value.plane(n, c) {
                    let d = v - mean[c];
                    *acc += d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= cnt);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize_with(xi, gi, bi, &mean, &inv_std);
        let rg = self.grad_of(&[xi, gi, bi]);
        let var_out = self.push(
            out,
            rg,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
            },
        );
        Ok((var_out, BatchStats { mean, var, count }))
    }

    /// Normalization with fixed (running) statistics; gradients flow to the
    /// input and the affine parameters only.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var, TensorError> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        self.check_affine(xi, gi, bi)?;
        let c = self.nodes[xi].value.shape().c;
        if mean.len() != c || var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm_frozen",
                dim: "statistics length",
                expected: c,
                found: mean.len().min(var.len()),
            });
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize_with(xi, gi, bi, mean, &inv_std);
        let rg = self.grad_of(&[xi, gi, bi]);
        Ok(self.push(
            out,
            rg,
            Op::FrozenNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
            },
        ))
    }

    /// Mean squared error over all elements, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        same_shape("mse", self.nodes[ai].value.shape(), self.nodes[bi].value.shape())?;
        let av = self.nodes[ai].value.data();
        let bv = self.nodes[bi].value.data();
        let total: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(total / T::lit(av.len() as f64));
        let rg = self.grad_of(&[ai, bi]);
        Ok(self.push(out, rg, Op::Mse { a: ai, b: bi }))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let li = self.check(loss)?;
        let ls = self.nodes[li].value.shape();
        if ls.numel() != 1 {
            return Err(TensorError::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(li + 1);
        grads.resize_with(li + 1, || None);
        grads[li] = Some(Tensor::full(ls, T::one()));
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            // keep gradients of interior nodes available for inspection
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].requires_grad;
        let mut acc = |j: usize, t: Tensor<T>| match &mut grads[j] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw) = conv::conv2d_backward(
                    &nodes[*x].value,
                    &nodes[*w].value,
                    *geom,
                    g,
                    needs(*x),
                    needs(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let sums = channel_sums(g);
                        let db = Tensor::from_vec(nodes[*b].value.shape(), sums)
                            .expect("bias shape");
                        acc(*b, db);
                    }
                }
            }
            Op::Pool {
                x,
                kind,
                geom,
                argmax,
            } => {
                let dx = pool::pool2d_backward(nodes[*x].value.shape(), *kind, *geom, argmax, g);
                acc(*x, dx);
            }
            Op::Upsample { x, factor } => {
                acc(*x, pool::upsample_backward(nodes[*x].value.shape(), *factor, g));
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    acc(*a, g.clone());
                }
                if needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                acc(*x, g.map(|v| v * f));
            }
            Op::Relu { x } => {
                let xv = nodes[*x].value.data();
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                acc(*x, dx);
            }
            Op::Softmax { x } => {
                let y = nodes[i].value.data();
                let dot: T = y.iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                let mut dx = g.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(y) {
                    *d = yv * (*d - dot);
                }
                acc(*x, dx);
            }
            Op::WeightedSum { terms, weights } => {
                let wv = nodes[*weights].value.data();
                if needs(*weights) {
                    let mut dw = Tensor::zeros(nodes[*weights].value.shape());
                    for &(xi, j) in terms {
                        let dot: T = nodes[xi]
                            .value
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&a, &b)| a * b)
                            .sum();
                        dw.data_mut()[j] += dot;
                    }
                    acc(*weights, dw);
                }
                for &(xi, j) in terms {
                    if needs(xi) {
                        let c = wv[j];
                        acc(xi, g.map(|v| v * c));
                    }
                }
            }
            Op::Concat { xs } => {
                let os = g.shape();
                let mut offset = 0;
                for &xi in xs {
                    let s = nodes[xi].value.shape();
                    if needs(xi) {
                        let mut data = Vec::with_capacity(s.numel());
                        for n in 0..os.n {
                            for c in 0..s.c {
                                data.extend_from_slice(g.plane(n, offset + c));
                            }
                        }
                        acc(xi, Tensor::from_vec(s, data).expect("concat slice"));
                    }
                    offset += s.c;
                }
            }
            Op::Gather { x, channels } => {
                let xs = nodes[*x].value.shape();
                let mut dx = Tensor::zeros(xs);
                let p = xs.plane();
                for n in 0..xs.n {
                    for (k, &c) in channels.iter().enumerate() {
                        let off = (n * xs.c + c) * p;
                        for (d, &v) in dx.data_mut()[off..off + p].iter_mut().zip(g.plane(n, k)) {
                            *d += v;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Merge { sel, bypass, mask } => {
                let os = g.shape();
                let targets = [(*sel, true), (bypass.expect("merge bypass"), false)];
                for (xi, want) in targets {
                    if !needs(xi) {
                        continue;
                    }
                    let s = nodes[xi].value.shape();
                    let mut data = Vec::with_capacity(s.numel());
                    for n in 0..os.n {
                        for (c, &m) in mask.iter().enumerate() {
                            if m == want {
                                data.extend_from_slice(g.plane(n, c));
                            }
                        }
                    }
                    acc(xi, Tensor::from_vec(s, data).expect("merge slice"));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = g.shape();
                let gv = nodes[*gamma].value.data();
                let dbeta = channel_sums(g);
                let mut dgamma = vec![T::zero(); s.c];
                for n in 0..s.n {
                    for (c, acc) in dgamma.iter_mut().enumerate() {
                        for (&a, &b) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                            *acc += a * b;
                        }
                    }
                }
                if needs(*x) {
                    let cnt = T::lit((s.n * s.plane()) as f64);
                    let mut dx = Tensor::zeros(s);
                    let p = s.plane();
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let k = gv[c] * inv_std[c] / cnt;
                            let off = (n * s.c + c) * p;
                            let d = &mut dx.data_mut()[off..off + p];
                            for ((o, &gy), &xh) in d.iter_mut().zip(g.plane(n, c)).zip(xhat.plane(n, c)) {
                                *o = k * (cnt * gy - dbeta[c] - xh * dgamma[c]);
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*gamma) {
                    acc(*gamma, Tensor::from_vec(nodes[*gamma].value.shape(), dgamma).expect("gamma"));
                }
                if needs(*beta) {
                    acc(*beta, Tensor::from_vec(nodes[*beta].value.shape(), dbeta).expect("beta"));
                }
            }
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = g.shape();
                let gv = nodes[*gamma].value.data();
                if needs(*x) {
                    let mut dx = g.clone();
                    let p = s.plane();
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let k = gv[c] * inv_std[c];
                            let off = (n * s.c + c) * p;
                            dx.data_mut()[off..off + p].iter_mut().for_each(|v| *v *= k);
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*gamma) {
                    let mut dgamma = vec![T::zero(); s.c];
                    for n in 0..s.n {
                        for (c, a) in dgamma.iter_mut().enumerate() {
                            for (&u, &v) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                                *a += u * v;
                            }
                        }
                    }
                    acc(*gamma, Tensor::from_vec(nodes[*gamma].value.shape(), dgamma).expect("gamma"));
                }
                if needs(*beta) {
                    acc(*beta, Tensor::from_vec(nodes[*beta].value.shape(), channel_sums(g)).expect("beta"));
                }
            }
            Op::Mse { a, b } => {
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                let k = T::lit(2.0) * g.item() / T::lit(av.len() as f64);
                let shape = nodes[*a].value.shape();
                let diff: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| k * (x - y)).collect();
                if needs(*b) {
                    let neg = diff.iter().map(|&d| -d).collect();
                    acc(*b, Tensor::from_vec(shape, neg).expect("mse"));
                }
                if needs(*a) {
                    acc(*a, Tensor::from_vec(shape, diff).expect("mse"));
                }
            }
        }
    }
}
