//! Genotype derivation: invariants, shift invariance, determinism and
//! agreement with exhaustive selection.

mod common;

use std::path::Path;

use crowd_nas::search_space::{
    arch_params_from_str, build_templates, derive_genotype, ArchParams, Genotype, GenotypeConfig,
    MicroOpKind, Templates,
};
use crowd_nas::seed::rng_for;
use proptest::prelude::*;

use common::{enumerate_cell, enumerate_spp, random_arch};

fn cfg() -> GenotypeConfig {
    GenotypeConfig {
        m: 2,
        c: 16,
        k: 4,
        seed: 0,
    }
}

fn arch_from_seed(seed: u64, scale: f64) -> (Templates, ArchParams) {
    let t = build_templates();
    let p = random_arch(&mut rng_for(seed, "derivation"), &t, scale);
    (t, p)
}

fn triples(genes: &[crowd_nas::search_space::CellGene]) -> Vec<(usize, usize, MicroOpKind)> {
    genes.iter().map(|g| (g.dst, g.src, g.op)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn genotype_invariants_hold(seed in any::<u64>(), scale in 0.01f64..5.0) {
        let (t, p) = arch_from_seed(seed, scale);
        let g = derive_genotype(&p, &t, cfg());
        prop_assert!(g.validate(&t).is_ok());
        for (genes, tpl) in [(&g.extraction, &t.extraction), (&g.fusion, &t.fusion)] {
            for dst in tpl.intermediates() {
                let srcs: Vec<usize> = genes.iter().filter(|x| x.dst == dst).map(|x| x.src).collect();
                prop_assert_eq!(srcs.len(), 2);
                prop_assert!(srcs[0] < srcs[1] && srcs[1] < dst);
            }
            prop_assert!(genes.iter().all(|x| x.op != MicroOpKind::Zero));
        }
        prop_assert_eq!(g.spp.len(), 3);
    }

    #[test]
    fn alpha_row_shifts_do_not_change_the_genotype(seed in any::<u64>(), shift in -20.0f64..20.0, row in 0usize..21) {
        let (t, p) = arch_from_seed(seed, 2.0);
        let mut q = p.clone();
        let ne = q.alpha_e.len();
        let target = if row < ne { &mut q.alpha_e[row] } else { &mut q.alpha_d[row - ne] };
        target.iter_mut().for_each(|a| *a += shift);
        q.alpha_s[row % 3].iter_mut().for_each(|a| *a += shift);
        prop_assert_eq!(derive_genotype(&p, &t, cfg()), derive_genotype(&q, &t, cfg()));
    }

    #[test]
    fn scaling_exp_beta_per_node_does_not_change_the_genotype(seed in any::<u64>(), log_scale in -10.0f64..10.0) {
        // Multiplying every exp(beta) of a node by a positive constant is a
        // shift of that node's beta logits.
        let (t, p) = arch_from_seed(seed, 2.0);
        let mut q = p.clone();
        for dst in t.extraction.intermediates() {
            for e in t.extraction.incoming(dst) {
                q.beta_e[e] += log_scale * dst as f64;
            }
        }
        for dst in t.fusion.intermediates() {
            for e in t.fusion.incoming(dst) {
                q.beta_d[e] -= log_scale;
            }
        }
        prop_assert_eq!(derive_genotype(&p, &t, cfg()), derive_genotype(&q, &t, cfg()));
    }

    #[test]
    fn derivation_is_byte_deterministic(seed in any::<u64>()) {
        let (t, p) = arch_from_seed(seed, 2.0);
        let a = derive_genotype(&p, &t, cfg()).to_json_string();
        let b = derive_genotype(&p.clone(), &build_templates(), cfg()).to_json_string();
        prop_assert_eq!(a.as_bytes(), b.as_bytes());
        let dir = tempfile::tempdir().unwrap();
        let (f1, f2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        derive_genotype(&p, &t, cfg()).save(&f1).unwrap();
        derive_genotype(&p, &t, cfg()).save(&f2).unwrap();
        prop_assert_eq!(std::fs::read(&f1).unwrap(), std::fs::read(&f2).unwrap());
    }

    #[test]
    fn derivation_matches_exhaustive_enumeration(seed in any::<u64>(), scale in 0.01f64..5.0) {
        let (t, p) = arch_from_seed(seed, scale);
        let g = derive_genotype(&p, &t, cfg());
        prop_assert_eq!(triples(&g.extraction), enumerate_cell(&t.extraction, &p.alpha_e, &p.beta_e));
        prop_assert_eq!(triples(&g.fusion), enumerate_cell(&t.fusion, &p.alpha_d, &p.beta_d));
        prop_assert_eq!(g.spp, enumerate_spp(&p.alpha_s));
    }
}

#[test]
fn enumeration_agrees_on_exact_ties() {
    let t = build_templates();
    let mut p = random_arch(&mut rng_for(0, "ties"), &t, 1.0);
    for row in p.alpha_e.iter_mut().chain(p.alpha_d.iter_mut()).chain(p.alpha_s.iter_mut()) {
        row.iter_mut().for_each(|a| *a = 0.5);
    }
    p.beta_e.iter_mut().chain(p.beta_d.iter_mut()).for_each(|b| *b = 0.0);
    let g = derive_genotype(&p, &t, cfg());
    assert_eq!(triples(&g.extraction), enumerate_cell(&t.extraction, &p.alpha_e, &p.beta_e));
    assert_eq!(triples(&g.fusion), enumerate_cell(&t.fusion, &p.alpha_d, &p.beta_d));
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn reference_arch_params_derive_the_reference_genotype_byte_exactly() {
    let text = std::fs::read_to_string(fixture("reference_arch_params.json")).unwrap();
    let (p, config) = arch_params_from_str(&text).unwrap();
    let g = derive_genotype(&p, &build_templates(), config);
    let want = std::fs::read_to_string(fixture("reference_genotype.json")).unwrap();
    assert_eq!(g.to_json_string(), want);
    assert_eq!(Genotype::load(&fixture("reference_genotype.json")).unwrap(), g);
}
