//! Brute-force reference implementations used as test oracles. They favour
//! obviousness over speed and share no code with the library kernels.
#![allow(dead_code)]

use crowd_nas::autodiff::{ChannelMask, ParamStore, PoolKind, BN_EPS};
use crowd_nas::search_space::{
    ArchParams, CellTemplate, MicroOpKind, PoolOpKind, Templates, EDGES_PER_NODE,
};
use crowd_nas::supernet::{Conv, OpLayer};
use crowd_nas::{Shape, Tensor};
use rand::Rng;

pub fn rand_tensor(rng: &mut impl Rng, shape: Shape, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-scale..scale))
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Direct convolution from the definition: zero padding, dilation, groups.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    dil: usize,
    groups: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let span = dil * (k - 1) + 1;
    let oh = (xs.h + 2 * pad - span) / stride + 1;
    let ow = (xs.w + 2 * pad - span) / stride + 1;
    let cin_g = xs.c / groups;
    let cout_g = ws.n / groups;
    Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, oc, i, j| {
        let g = oc / cout_g;
        let mut acc = b.map(|b| b.data()[oc]).unwrap_or(0.0);
        for icl in 0..cin_g {
            let ic = g * cin_g + icl;
            for a in 0..k {
                for c in 0..k {
                    let r = (i * stride + a * dil) as isize - pad as isize;
                    let q = (j * stride + c * dil) as isize - pad as isize;
                    if r >= 0 && q >= 0 && (r as usize) < xs.h && (q as usize) < xs.w {
                        acc += w.at(oc, icl, a, c) * x.at(n, ic, r as usize, q as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Pooling from the definition: window `k`, stride `s`, padding `(k-s)/2`;
/// max takes the largest valid element, avg divides by the valid count.
pub fn pool_oracle(x: &Tensor<f64>, kind: PoolKind, k: usize, s: usize) -> Tensor<f64> {
    let xs = x.shape();
    let pad = (k - s) / 2;
    let oh = (xs.h + 2 * pad - k) / s + 1;
    let ow = (xs.w + 2 * pad - k) / s + 1;
    Tensor::from_fn(Shape::new(xs.n, xs.c, oh, ow), |n, c, i, j| {
        let mut vals = Vec::new();
        for a in 0..k {
            for b in 0..k {
                let r = (i * s + a) as isize - pad as isize;
                let q = (j * s + b) as isize - pad as isize;
                if r >= 0 && q >= 0 && (r as usize) < xs.h && (q as usize) < xs.w {
                    vals.push(x.at(n, c, r as usize, q as usize));
                }
            }
        }
        match kind {
            PoolKind::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PoolKind::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
        }
    })
}

pub fn relu_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| v.max(0.0))
}

/// Batch norm with biased batch variance.
pub fn bn_oracle(x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let cnt = (s.n * s.h * s.w) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            for i in 0..s.h {
                for j in 0..s.w {
                    mean[c] += x.at(n, c, i, j) / cnt;
                }
            }
        }
        for n in 0..s.n {
            for i in 0..s.h {
                for j in 0..s.w {
                    var[c] += (x.at(n, c, i, j) - mean[c]).powi(2) / cnt;
                }
            }
        }
    }
    Tensor::from_fn(s, |n, c, i, j| {
        (x.at(n, c, i, j) - mean[c]) / (var[c] + BN_EPS).sqrt() * gamma.data()[c] + beta.data()[c]
    })
}

fn conv_layer_oracle(store: &ParamStore<f64>, conv: &Conv, x: &Tensor<f64>) -> Tensor<f64> {
    conv_oracle(
        x,
        store.get(conv.weight),
        conv.bias.map(|b| store.get(b)),
        conv.geom.stride,
        conv.geom.padding,
        conv.geom.dilation,
        conv.geom.groups,
    )
}

/// Candidate op from its definition; `None` for the zero op.
pub fn op_oracle(store: &ParamStore<f64>, op: &OpLayer, x: &Tensor<f64>) -> Option<Tensor<f64>> {
    match op {
        OpLayer::Skip => Some(x.clone()),
        OpLayer::Zero => None,
        OpLayer::Conv { conv, norm } => {
            let y = conv_layer_oracle(store, conv, &relu_oracle(x));
            Some(bn_oracle(&y, store.get(norm.gamma), store.get(norm.beta)))
        }
        OpLayer::Separable {
            depthwise,
            pointwise,
            norm,
        } => {
            let y = conv_layer_oracle(store, depthwise, &relu_oracle(x));
            let y = conv_layer_oracle(store, pointwise, &y);
            Some(bn_oracle(&y, store.get(norm.gamma), store.get(norm.beta)))
        }
    }
}

/// Partial-channel mixed op: mixture on the selected channels, identity on
/// the rest, channels kept in place.
pub fn mixed_op_oracle(
    store: &ParamStore<f64>,
    ops: &[OpLayer],
    x: &Tensor<f64>,
    weights: &[f64],
    mask: &ChannelMask,
) -> Tensor<f64> {
    let s = x.shape();
    let sel = mask.selected();
    let xs = Tensor::from_fn(Shape::new(s.n, sel.len(), s.h, s.w), |n, c, i, j| x.at(n, sel[c], i, j));
    let mut mix = Tensor::zeros(xs.shape());
    for (o, op) in ops.iter().enumerate() {
        if let Some(y) = op_oracle(store, op, &xs) {
            for (m, v) in mix.data_mut().iter_mut().zip(y.data()) {
                *m += weights[o] * v;
            }
        }
    }
    Tensor::from_fn(s, |n, c, i, j| match sel.iter().position(|&q| q == c) {
        Some(k) => mix.at(n, k, i, j),
        None => x.at(n, c, i, j),
    })
}

pub fn weighted_sum_oracle(terms: &[Tensor<f64>], weights: &[f64]) -> Tensor<f64> {
    Tensor::from_fn(terms[0].shape(), |n, c, i, j| {
        terms.iter().zip(weights).map(|(t, w)| w * t.at(n, c, i, j)).sum()
    })
}

pub fn mixed_pool_oracle(x: &Tensor<f64>, weights: &[f64]) -> Tensor<f64> {
    let pooled: Vec<Tensor<f64>> = PoolOpKind::ALL
        .iter()
        .map(|p| pool_oracle(x, p.kind(), p.kernel(), PoolOpKind::STRIDE))
        .collect();
    weighted_sum_oracle(&pooled, weights)
}

pub fn mse_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.numel() as f64
}

/// Pyramid loss with per-level pooling weights over `PoolOpKind::ALL`.
pub fn spp_oracle(e: &Tensor<f64>, g: &Tensor<f64>, level_weights: &[Vec<f64>]) -> f64 {
    let mut loss = mse_oracle(e, g);
    let (mut e, mut g) = (e.clone(), g.clone());
    for w in level_weights {
        e = mixed_pool_oracle(&e, w);
        g = mixed_pool_oracle(&g, w);
        loss += mse_oracle(&e, &g);
    }
    loss
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Exhaustive selection for one cell: for every node, tries every pair of
/// incoming edges with every assignment of non-zero ops, scores a choice
/// by its importances sorted in decreasing order and keeps the
/// lexicographically largest (first found on ties). Returns
/// `(dst, src, op)` ordered by `dst`, then `src`.
pub fn enumerate_cell(template: &CellTemplate, alpha: &[Vec<f64>], beta: &[f64]) -> Vec<(usize, usize, MicroOpKind)> {
    assert_eq!(EDGES_PER_NODE, 2);
    let candidates: Vec<MicroOpKind> = MicroOpKind::ALL
        .iter()
        .copied()
        .filter(|&o| o != MicroOpKind::Zero)
        .collect();
    let mut out = Vec::new();
    for dst in template.intermediates() {
        let inc: Vec<usize> = (0..template.edges.len()).filter(|&e| template.edges[e].dst == dst).collect();
        let b = softmax(&inc.iter().map(|&e| beta[e]).collect::<Vec<_>>());
        let mut best: Option<((f64, f64), [(usize, MicroOpKind); 2])> = None;
        for i in 0..inc.len() {
            for j in i + 1..inc.len() {
                let (pi, pj) = (softmax(&alpha[inc[i]]), softmax(&alpha[inc[j]]));
                for &oi in &candidates {
                    for &oj in &candidates {
                        let si = b[i] * pi[oi.index()];
                        let sj = b[j] * pj[oj.index()];
                        let key = if si >= sj { (si, sj) } else { (sj, si) };
                        let better = match &best {
                            None => true,
                            Some((k, _)) => key.0 > k.0 || (key.0 == k.0 && key.1 > k.1),
                        };
                        if better {
                            let src = |e: usize| template.edges[inc[e]].src;
                            best = Some((key, [(src(i), oi), (src(j), oj)]));
                        }
                    }
                }
            }
        }
        let (_, picks) = best.expect("node has at least two incoming edges");
        out.extend(picks.iter().map(|&(src, op)| (dst, src, op)));
    }
    out
}

/// Exhaustive pooling choice per level: the first maximum of each row.
pub fn enumerate_spp(alpha_s: &[Vec<f64>]) -> Vec<PoolOpKind> {
    alpha_s
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            PoolOpKind::ALL[best]
        })
        .collect()
}

/// Random architecture parameters in `[-scale, scale]`.
pub fn random_arch(rng: &mut impl Rng, t: &Templates, scale: f64) -> ArchParams {
    let mut row = |n: usize| (0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    ArchParams {
        alpha_e: (0..t.extraction.edges.len()).map(|_| row(MicroOpKind::COUNT)).collect(),
        beta_e: row(t.extraction.edges.len()),
        alpha_d: (0..t.fusion.edges.len()).map(|_| row(MicroOpKind::COUNT)).collect(),
        beta_d: row(t.fusion.edges.len()),
        alpha_s: (0..t.pyramid.edges.len()).map(|_| row(PoolOpKind::COUNT)).collect(),
    }
}
