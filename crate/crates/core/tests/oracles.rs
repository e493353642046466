//! Library kernels against brute-force reference implementations, without
//! gradients, in f64.

mod common;

use crowd_nas::autodiff::{ConvGeom, ParamStore, PoolKind, Tape};
use crowd_nas::search_space::{MicroOpKind, PoolOpKind};
use crowd_nas::seed::rng_for;
use crowd_nas::spploss::{mixed_pool_forward, spp_loss, Pyramid};
use crowd_nas::supernet::{draw_mask, mixed_op_forward, node_forward, Ctx, OpLayer};
use crowd_nas::{Shape, Tensor};
use rand::Rng;

use common::*;

const TOL: f64 = 1e-6;
const INSTANCES: u64 = 25;

fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    softmax(&(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
}

#[test]
fn conv2d_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "conv-oracle");
        let k = [1, 3, 5, 7][rng.random_range(0..4)];
        let dil = rng.random_range(1..=2);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let span = dil * (k - 1) + 1;
        let h = rng.random_range(span..=span + 4);
        let x = rand_tensor(&mut rng, Shape::new(2, cin, h, h + 1), 1.0);
        let w = rand_tensor(&mut rng, Shape::new(cout, cin, k, k), 1.0);
        let b = rand_tensor(&mut rng, Shape::vector(cout), 1.0);
        let geom = ConvGeom {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=dil * (k - 1) / 2),
            dilation: dil,
            groups: 1,
        };
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, wv, Some(bv), geom).unwrap();
        let want = conv_oracle(&x, &w, Some(&b), geom.stride, geom.padding, dil, 1);
        assert!(max_abs_diff(t.value(y), &want) < TOL, "instance {i}");
    }
}

#[test]
fn dilated_conv_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "dilated-oracle");
        let k = [3, 5, 7][rng.random_range(0..3)];
        let c = rng.random_range(1..=3);
        let x = rand_tensor(&mut rng, Shape::new(2, c, 8, 8), 1.0);
        let w = rand_tensor(&mut rng, Shape::new(c, c, k, k), 1.0);
        let geom = ConvGeom::same(k, 2);
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
        let y = t.conv2d(xv, wv, None, geom).unwrap();
        let want = conv_oracle(&x, &w, None, 1, geom.padding, 2, 1);
        assert_eq!(want.shape(), x.shape());
        assert!(max_abs_diff(t.value(y), &want) < TOL, "instance {i}");
    }
}

#[test]
fn separable_conv_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "separable-oracle");
        let k = [3, 5, 7][rng.random_range(0..3)];
        let c = rng.random_range(1..=4);
        let x = rand_tensor(&mut rng, Shape::new(2, c, 8, 8), 1.0);
        let dw = rand_tensor(&mut rng, Shape::new(c, 1, k, k), 1.0);
        let pw = rand_tensor(&mut rng, Shape::new(c, c, 1, 1), 1.0);
        let mut t = Tape::new();
        let (xv, dv, pv) = (t.constant(x.clone()), t.constant(dw.clone()), t.constant(pw.clone()));
        let d = t.conv2d(xv, dv, None, ConvGeom::same(k, 1).with_groups(c)).unwrap();
        let y = t.conv2d(d, pv, None, ConvGeom::same(1, 1)).unwrap();
        let want = conv_oracle(&conv_oracle(&x, &dw, None, 1, (k - 1) / 2, 1, c), &pw, None, 1, 0, 1, 1);
        assert!(max_abs_diff(t.value(y), &want) < TOL, "instance {i}");
    }
}

#[test]
fn pool2d_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "pool-oracle");
        let op = PoolOpKind::ALL[rng.random_range(0..PoolOpKind::COUNT)];
        let h = 2 * rng.random_range(1..=6);
        let x = rand_tensor(&mut rng, Shape::new(2, 2, h, h + 2), 1.0);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = t.pool2d(xv, op.kind(), op.kernel(), 2).unwrap();
        let want = pool_oracle(&x, op.kind(), op.kernel(), 2);
        assert_eq!(t.value(y).shape(), Shape::new(2, 2, h / 2, h / 2 + 1));
        assert!(max_abs_diff(t.value(y), &want) < TOL, "instance {i} ({op})");
    }
    // Stride 1 odd kernels keep the size too.
    let x = rand_tensor(&mut rng_for(0, "pool-s1"), Shape::new(1, 1, 5, 5), 1.0);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let y = t.pool2d(xv, PoolKind::Avg, 3, 1).unwrap();
    assert!(max_abs_diff(t.value(y), &pool_oracle(&x, PoolKind::Avg, 3, 1)) < TOL);
}

#[test]
fn mixed_op_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "mixed-op-oracle");
        let width = rng.random_range(2..=6);
        let selected = rng.random_range(1..=width);
        let mut store = ParamStore::<f64>::new();
        let mut slots = 0;
        let ops: Vec<OpLayer> = MicroOpKind::ALL
            .iter()
            .map(|&op| OpLayer::new(&mut store, &mut rng, &mut slots, &format!("e.{op}"), op, selected))
            .collect();
        for v in store.values_mut() {
            *v = rand_tensor(&mut rng, v.shape(), 1.0);
        }
        let x = rand_tensor(&mut rng, Shape::new(2, width, 6, 6), 1.0);
        let weights = random_weights(&mut rng, MicroOpKind::COUNT);
        let mask = draw_mask(&mut rng, width, selected);

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let wv = tape.constant(Tensor::vector(&weights));
        let mut ctx = Ctx::train(&mut tape, &binding);
        let y = mixed_op_forward(&mut ctx, &ops, xv, wv, &mask).unwrap();
        let want = mixed_op_oracle(&store, &ops, &x, &weights, &mask);
        assert!(max_abs_diff(tape.value(y), &want) < TOL, "instance {i}");
    }
}

#[test]
fn node_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "node-oracle");
        let edges = rng.random_range(1..=5);
        let terms: Vec<Tensor<f64>> = (0..edges)
            .map(|_| rand_tensor(&mut rng, Shape::new(2, 3, 4, 4), 1.0))
            .collect();
        let beta = random_weights(&mut rng, edges);
        let mut t = Tape::new();
        let vars: Vec<_> = terms.iter().map(|x| t.constant(x.clone())).collect();
        let bv = t.constant(Tensor::vector(&beta));
        let y = node_forward(&mut t, &vars, bv).unwrap();
        assert!(max_abs_diff(t.value(y), &weighted_sum_oracle(&terms, &beta)) < TOL, "instance {i}");
    }
}

#[test]
fn mixed_pool_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "mixed-pool-oracle");
        let h = 2 * rng.random_range(1..=8);
        let x = rand_tensor(&mut rng, Shape::new(2, 1, h, h), 1.0);
        let w = random_weights(&mut rng, PoolOpKind::COUNT);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.constant(Tensor::vector(&w));
        let y = mixed_pool_forward(&mut t, xv, wv).unwrap();
        assert!(max_abs_diff(t.value(y), &mixed_pool_oracle(&x, &w)) < TOL, "instance {i}");
    }
}

#[test]
fn spp_loss_matches_oracle() {
    for i in 0..INSTANCES {
        let mut rng = rng_for(i, "spp-oracle");
        let h = 8 * rng.random_range(1..=4);
        let e = rand_tensor(&mut rng, Shape::new(2, 1, h, h), 1.0);
        let g = rand_tensor(&mut rng, Shape::new(2, 1, h, h), 1.0).map(f64::abs);
        let levels: Vec<Vec<f64>> = (0..3).map(|_| random_weights(&mut rng, PoolOpKind::COUNT)).collect();
        let mut t = Tape::new();
        let (ev, gv) = (t.constant(e.clone()), t.constant(g.clone()));
        let wv: Vec<_> = levels.iter().map(|w| t.constant(Tensor::vector(w))).collect();
        let loss = spp_loss(&mut t, ev, gv, Pyramid::Mixed(&wv)).unwrap();
        let want = spp_oracle(&e, &g, &levels);
        assert!((t.value(loss).item() - want).abs() < TOL, "instance {i}");

        // A one-hot mixture is the fixed pyramid.
        let ops: Vec<PoolOpKind> = (0..3).map(|_| PoolOpKind::ALL[rng.random_range(0..6)]).collect();
        let onehot: Vec<Vec<f64>> = ops
            .iter()
            .map(|o| (0..6).map(|j| if j == o.index() { 1.0 } else { 0.0 }).collect())
            .collect();
        let fixed = spp_loss(&mut t, ev, gv, Pyramid::Fixed(&ops)).unwrap();
        assert!((t.value(fixed).item() - spp_oracle(&e, &g, &onehot)).abs() < TOL);
    }
}
