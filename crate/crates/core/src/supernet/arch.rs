//! Architecture parameters as tape leaves.

use crate::autodiff::{Gradients, ParamStore, Tape, Var};
use crate::error::TensorError;
use crate::search_space::{ArchParams, CellTemplate, Templates};
use crate::tensor::{Real, Tensor};

/// Architecture parameters held as optimizable tensors: one row per edge
/// for `alpha`, and one `beta` vector per intermediate node covering its
/// incoming edges in source order.
#[derive(Clone, Debug)]
pub struct ArchStore<T> {
    pub store: ParamStore<T>,
    layout: Layout,
}

/// Start offsets of each parameter group in the store.
#[derive(Clone, Debug)]
struct Layout {
    starts: [usize; 6],
    beta_e: Vec<Vec<usize>>,
    beta_d: Vec<Vec<usize>>,
}

/// Softmax-normalized architecture weights bound on one tape.
#[derive(Clone, Debug)]
pub struct ArchVars {
    /// Raw leaves in store order (for gradient extraction).
    pub leaves: Vec<Var>,
    /// Per-edge op weights of the extraction cell.
    pub alpha_e: Vec<Var>,
    /// Per-node edge weights of the extraction cell, indexed like
    /// `template.intermediates()`.
    pub beta_e: Vec<Var>,
    pub alpha_d: Vec<Var>,
    pub beta_d: Vec<Var>,
    /// Per-level pooling weights of the loss pyramid.
    pub alpha_s: Vec<Var>,
}

fn node_groups(t: &CellTemplate) -> Vec<Vec<usize>> {
    t.intermediates().into_iter().map(|d| t.incoming(d)).collect()
}

impl<T: Real> ArchStore<T> {
    pub fn from_params(p: &ArchParams, templates: &Templates) -> Self {
        let lit = |v: &[f64]| Tensor::vector(&v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>());
        let mut store = ParamStore::new();
        let mut starts = [0; 6];
        let beta_e = node_groups(&templates.extraction);
        let beta_d = node_groups(&templates.fusion);
        for (e, row) in p.alpha_e.iter().enumerate() {
            store.add(format!("alpha_e.{e}"), lit(row));
        }
        starts[1] = store.len();
        for (k, edges) in beta_e.iter().enumerate() {
            let v: Vec<f64> = edges.iter().map(|&e| p.beta_e[e]).collect();
            store.add(format!("beta_e.{k}"), lit(&v));
        }
        starts[2] = store.len();
        for (e, row) in p.alpha_d.iter().enumerate() {
            store.add(format!("alpha_d.{e}"), lit(row));
        }
        starts[3] = store.len();
        for (k, edges) in beta_d.iter().enumerate() {
            let v: Vec<f64> = edges.iter().map(|&e| p.beta_d[e]).collect();
            store.add(format!("beta_d.{k}"), lit(&v));
        }
        starts[4] = store.len();
        for (l, row) in p.alpha_s.iter().enumerate() {
            store.add(format!("alpha_s.{l}"), lit(row));
        }
        starts[5] = store.len();
        ArchStore {
            store,
            layout: Layout {
                starts,
                beta_e,
                beta_d,
            },
        }
    }

    fn range(&self, group: usize) -> std::ops::Range<usize> {
        self.layout.starts[group]..self.layout.starts[group + 1]
    }

    pub fn to_params(&self) -> ArchParams {
        let v = self.store.values();
        let row = |i: usize| -> Vec<f64> { v[i].data().iter().map(|x| x.as_f64()).collect() };
        let scatter = |groups: &[Vec<usize>], range: std::ops::Range<usize>| {
            let len = groups.iter().map(Vec::len).sum();
            let mut out = vec![0.0; len];
            for (edges, i) in groups.iter().zip(range) {
                for (&e, x) in edges.iter().zip(row(i)) {
                    out[e] = x;
                }
            }
            out
        };
        ArchParams {
            alpha_e: self.range(0).map(row).collect(),
            beta_e: scatter(&self.layout.beta_e, self.range(1)),
            alpha_d: self.range(2).map(row).collect(),
            beta_d: scatter(&self.layout.beta_d, self.range(3)),
            alpha_s: self.range(4).map(row).collect(),
        }
    }

    /// Binds every parameter as a leaf and precomputes their softmaxes.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Result<ArchVars, TensorError> {
        let leaves = self.store.bind(tape, requires_grad).vars().to_vec();
        self.vars_from_leaves(tape, leaves)
    }

    /// Softmaxes existing leaves (one per stored tensor, in store order).
    pub fn vars_from_leaves(&self, tape: &mut Tape<T>, leaves: Vec<Var>) -> Result<ArchVars, TensorError> {
        let mut sm = |range: std::ops::Range<usize>| -> Result<Vec<Var>, TensorError> {
            range.map(|i| tape.softmax(leaves[i])).collect()
        };
        Ok(ArchVars {
            alpha_e: sm(self.range(0))?,
            beta_e: sm(self.range(1))?,
            alpha_d: sm(self.range(2))?,
            beta_d: sm(self.range(3))?,
            alpha_s: sm(self.range(4))?,
            leaves,
        })
    }

    /// Gradients of every stored tensor (zeros where the loss does not reach).
    pub fn gradients(&self, vars: &ArchVars, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.store
            .values()
            .iter()
            .zip(&vars.leaves)
            .map(|(v, &leaf)| grads.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{build_templates, init_arch_params};

    #[test]
    fn store_round_trip() {
        let t = build_templates();
        let p = init_arch_params(&t, 9);
        let s = ArchStore::<f64>::from_params(&p, &t);
        assert_eq!(s.to_params(), p);
    }
}
