//! First-order optimizers and learning-rate schedules.

use std::f64::consts::PI;

use crate::tensor::{Real, Tensor};

use super::params::ParamStore;

fn zeros_like<T: Real>(store: &ParamStore<T>) -> Vec<Tensor<T>> {
    store.values().iter().map(|v| Tensor::zeros(v.shape())).collect()
}

/// SGD with optional heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.velocity.is_empty() {
            self.velocity = zeros_like(params);
        }
        let (lr, mu, wd) = (T::lit(lr), T::lit(self.momentum), T::lit(self.weight_decay));
        for ((p, g), vel) in params.values_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
                let d = gv + wd * *pv;
                *v = mu * *v + d;
                *pv -= lr * *v;
            }
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = zeros_like(params);
            self.v = zeros_like(params);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, wd, eps) = (T::one(), T::lit(self.weight_decay), T::lit(self.eps));
        let step = T::lit(lr / bc1);
        let bc2 = T::lit(bc2);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((pv, &gv), mv), vv) in it {
                let d = gv + wd * *pv;
                *mv = b1 * *mv + (one - b1) * d;
                *vv = b2 * *vv + (one - b2) * d * d;
                *pv -= step * *mv / ((*vv / bc2).sqrt() + eps);
            }
        }
    }
}

/// Half-cosine decay from `max_lr` at step 0 to `min_lr` at `final_step`.
pub fn cosine_lr(step: usize, final_step: usize, max_lr: f64, min_lr: f64) -> f64 {
    if step == 0 {
        return max_lr;
    }
    if step >= final_step {
        return min_lr;
    }
    let progress = step as f64 / final_step as f64;
    min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (PI * progress).cos())
}

/// `base * factor^(iteration / interval)`.
pub fn step_decay_lr(base: f64, factor: f64, interval: usize, iteration: usize) -> f64 {
    base * factor.powi((iteration / interval.max(1)) as i32)
}
