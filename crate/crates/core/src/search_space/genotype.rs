use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::GenotypeError;

use super::arch::ArchParams;
use super::ops::{MicroOpKind, PoolOpKind};
use super::template::{CellTemplate, Templates};

pub const GENOTYPE_VERSION: u32 = 1;
/// Edges retained per intermediate node.
pub const EDGES_PER_NODE: usize = 2;

/// Network settings recorded alongside a genotype.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
}

/// One retained edge: `op` applied to node `src`, summed into node `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGene {
    pub dst: usize,
    pub src: usize,
    pub op: MicroOpKind,
}

/// A discrete architecture: the retained edges of the extraction and fusion
/// cells (ordered by `dst`, then `src`) and one pooling op per pyramid level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub version: u32,
    pub config: GenotypeConfig,
    pub extraction: Vec<CellGene>,
    pub fusion: Vec<CellGene>,
    pub spp: Vec<PoolOpKind>,
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Index of the largest entry, ignoring `skip`; ties resolve to the lowest index.
fn argmax_excluding(v: &[f64], skip: Option<usize>) -> usize {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best.expect("non-empty candidate set")
}

/// Best non-zero op of an edge and its softmax weight.
pub fn best_op(alpha: &[f64]) -> (MicroOpKind, f64) {
    let probs = softmax(alpha);
    let i = argmax_excluding(&probs, Some(MicroOpKind::Zero.index()));
    (MicroOpKind::from_index(i).expect("op index"), probs[i])
}

/// Importance of each edge: softmax of `beta` over the node's incoming edges
/// times the weight of the edge's best op.
pub fn edge_importance(template: &CellTemplate, alpha: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; template.edges.len()];
    for dst in template.intermediates() {
        let incoming = template.incoming(dst);
        let logits: Vec<f64> = incoming.iter().map(|&e| beta[e]).collect();
        for (&e, b) in incoming.iter().zip(softmax(&logits)) {
            out[e] = b * best_op(&alpha[e]).1;
        }
    }
    out
}

fn derive_cell(template: &CellTemplate, alpha: &[Vec<f64>], beta: &[f64]) -> Vec<CellGene> {
    let importance = edge_importance(template, alpha, beta);
    let mut genes = Vec::new();
    for dst in template.intermediates() {
        let mut incoming = template.incoming(dst);
        // Stable sort: equal importance keeps the lower source first.
        incoming.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
        let mut kept: Vec<usize> = incoming.into_iter().take(EDGES_PER_NODE).collect();
        kept.sort_by_key(|&e| template.edges[e].src);
        genes.extend(kept.into_iter().map(|e| CellGene {
            dst,
            src: template.edges[e].src,
            op: best_op(&alpha[e]).0,
        }));
    }
    genes
}

/// Discretizes continuous architecture parameters.
pub fn derive_genotype(
    params: &ArchParams,
    templates: &Templates,
    config: GenotypeConfig,
) -> Genotype {
    let spp = params
        .alpha_s
        .iter()
        .map(|row| PoolOpKind::from_index(argmax_excluding(row, None)).expect("pool index"))
        .collect();
    Genotype {
        version: GENOTYPE_VERSION,
        config,
        extraction: derive_cell(&templates.extraction, &params.alpha_e, &params.beta_e),
        fusion: derive_cell(&templates.fusion, &params.alpha_d, &params.beta_d),
        spp,
    }
}

fn validate_cell(name: &str, genes: &[CellGene], template: &CellTemplate) -> Result<(), GenotypeError> {
    let expected: usize = template.intermediates().len() * EDGES_PER_NODE;
    if genes.len() != expected {
        return Err(GenotypeError::Invalid(format!(
            "{name} cell has {} edges, expected {expected}",
            genes.len()
        )));
    }
    for dst in template.intermediates() {
        let srcs: Vec<usize> = genes.iter().filter(|g| g.dst == dst).map(|g| g.src).collect();
        if srcs.len() != EDGES_PER_NODE {
            return Err(GenotypeError::Invalid(format!(
                "{name} node {dst} has {} incoming edges, expected {EDGES_PER_NODE}",
                srcs.len()
            )));
        }
        if srcs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GenotypeError::Invalid(format!(
                "{name} node {dst} sources must be distinct and increasing"
            )));
        }
    }
    for g in genes {
        if template.edge_index(g.src, g.dst).is_none() {
            return Err(GenotypeError::Invalid(format!(
                "{name} edge {} -> {} is not in the template",
                g.src, g.dst
            )));
        }
        if g.op == MicroOpKind::Zero {
            return Err(GenotypeError::Invalid(format!(
                "{name} edge {} -> {} uses the zero op",
                g.src, g.dst
            )));
        }
    }
    if genes.windows(2).any(|w| (w[0].dst, w[0].src) >= (w[1].dst, w[1].src)) {
        return Err(GenotypeError::Invalid(format!("{name} edges must be ordered by dst, then src")));
    }
    Ok(())
}

impl Genotype {
    pub fn validate(&self, templates: &Templates) -> Result<(), GenotypeError> {
        if self.version != GENOTYPE_VERSION {
            return Err(GenotypeError::VersionMismatch {
                expected: GENOTYPE_VERSION,
                found: self.version as u64,
            });
        }
        validate_cell("extraction", &self.extraction, &templates.extraction)?;
        validate_cell("fusion", &self.fusion, &templates.fusion)?;
        if self.spp.len() != templates.pyramid.edges.len() {
            return Err(GenotypeError::Invalid(format!(
                "spp has {} levels, expected {}",
                self.spp.len(),
                templates.pyramid.edges.len()
            )));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("genotype serialize");
        s.push('\n');
        s
    }

    /// Parses and validates a genotype. Version mismatches, malformed JSON and
    /// structurally invalid genotypes are reported as distinct errors.
    pub fn from_json_str(text: &str) -> Result<Self, GenotypeError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| GenotypeError::Malformed(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| GenotypeError::Malformed("missing `version`".into()))?;
        if version != GENOTYPE_VERSION as u64 {
            return Err(GenotypeError::VersionMismatch {
                expected: GENOTYPE_VERSION,
                found: version,
            });
        }
        let g: Genotype =
            serde_json::from_value(value).map_err(|e| GenotypeError::Malformed(e.to_string()))?;
        g.validate(&super::build_templates())?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GenotypeError> {
        std::fs::write(path, self.to_json_string()).map_err(|source| GenotypeError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GenotypeError> {
        let text = std::fs::read_to_string(path).map_err(|source| GenotypeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Graphviz rendering of both cells and the pyramid.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph genotype {\n  rankdir=LR;\n  node [shape=box];\n");
        let cell = |s: &mut String, name: &str, genes: &[CellGene], inputs: usize| {
            let _ = writeln!(s, "  subgraph cluster_{name} {{\n    label=\"{name}\";");
            let max_dst = genes.iter().map(|g| g.dst).max().unwrap_or(inputs);
            for i in 0..inputs {
                let _ = writeln!(s, "    {name}_{i} [label=\"in {i}\", style=filled];");
            }
            for n in inputs..=max_dst {
                let _ = writeln!(s, "    {name}_{n} [label=\"node {n}\"];");
            }
            let _ = writeln!(s, "    {name}_out [label=\"concat\", style=filled];");
            for g in genes {
                let _ = writeln!(s, "    {name}_{} -> {name}_{} [label=\"{}\"];", g.src, g.dst, g.op);
            }
            for n in inputs..=max_dst {
                let _ = writeln!(s, "    {name}_{n} -> {name}_out;");
            }
            s.push_str("  }\n");
        };
        cell(&mut s, "extraction", &self.extraction, 2);
        cell(&mut s, "fusion", &self.fusion, 3);
        s.push_str("  subgraph cluster_spp {\n    label=\"spp\";\n    spp_0 [label=\"density\"];\n");
        for (l, op) in self.spp.iter().enumerate() {
            let _ = writeln!(s, "    spp_{} [label=\"level {}\"];", l + 1, l + 1);
            let _ = writeln!(s, "    spp_{l} -> spp_{} [label=\"{op}\"];", l + 1);
        }
        s.push_str("  }\n}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{build_templates, init_arch_params};

    fn cfg() -> GenotypeConfig {
        GenotypeConfig {
            m: 2,
            c: 16,
            k: 4,
            seed: 0,
        }
    }

    #[test]
    fn derived_genotype_is_valid() {
        let t = build_templates();
        for seed in 0..5 {
            let p = init_arch_params(&t, seed);
            let g = derive_genotype(&p, &t, cfg());
            g.validate(&t).unwrap();
            assert_eq!(g.extraction.len(), 8);
            assert_eq!(g.fusion.len(), 4);
            assert_eq!(g.spp.len(), 3);
        }
    }

    #[test]
    fn zero_op_never_selected() {
        let t = build_templates();
        let mut p = init_arch_params(&t, 1);
        for row in p.alpha_e.iter_mut().chain(p.alpha_d.iter_mut()) {
            row[MicroOpKind::Zero.index()] = 50.0;
        }
        let g = derive_genotype(&p, &t, cfg());
        assert!(g.extraction.iter().chain(&g.fusion).all(|x| x.op != MicroOpKind::Zero));
    }

    #[test]
    fn all_ties_pick_lowest_indices() {
        let t = build_templates();
        let mut p = init_arch_params(&t, 1);
        for v in p.alpha_e.iter_mut().chain(p.alpha_d.iter_mut()).chain(p.alpha_s.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        p.beta_e.iter_mut().chain(p.beta_d.iter_mut()).for_each(|x| *x = 0.0);
        let g = derive_genotype(&p, &t, cfg());
        for dst in 2..6 {
            let srcs: Vec<_> = g.extraction.iter().filter(|x| x.dst == dst).map(|x| x.src).collect();
            assert_eq!(srcs, vec![0, 1]);
        }
        assert!(g.extraction.iter().all(|x| x.op == MicroOpKind::Conv1x1));
        assert!(g.spp.iter().all(|&x| x == PoolOpKind::ALL[0]));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let t = build_templates();
        let g = derive_genotype(&init_arch_params(&t, 2), &t, cfg());
        let text = g.to_json_string();
        assert_eq!(Genotype::from_json_str(&text).unwrap(), g);
        assert!(matches!(
            Genotype::from_json_str(&text.replacen("\"version\": 1", "\"version\": 2", 1)),
            Err(GenotypeError::VersionMismatch { found: 2, .. })
        ));
        assert!(matches!(Genotype::from_json_str("{"), Err(GenotypeError::Malformed(_))));
        let mut bad = g.clone();
        bad.extraction.pop();
        assert!(matches!(
            Genotype::from_json_str(&bad.to_json_string()),
            Err(GenotypeError::Invalid(_))
        ));
    }

    #[test]
    fn dot_mentions_every_op() {
        let t = build_templates();
        let g = derive_genotype(&init_arch_params(&t, 2), &t, cfg());
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        for x in g.extraction.iter().chain(&g.fusion) {
            assert!(dot.contains(x.op.name()));
        }
    }
}
