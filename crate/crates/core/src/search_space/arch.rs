use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::GenotypeError;
use crate::seed;

use super::genotype::GenotypeConfig;
use super::ops::{MicroOpKind, PoolOpKind};
use super::template::{CellTemplate, Templates};

pub const ARCH_PARAMS_VERSION: u32 = 1;
const INIT_STD: f64 = 1e-3;

/// Continuous architecture parameters: per-op logits `alpha` for every edge
/// and per-edge logits `beta` for the extraction and fusion cells, plus
/// per-level pooling logits for the loss pyramid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub alpha_e: Vec<Vec<f64>>,
    pub beta_e: Vec<f64>,
    pub alpha_d: Vec<Vec<f64>>,
    pub beta_d: Vec<f64>,
    pub alpha_s: Vec<Vec<f64>>,
}

/// Draws every logit i.i.d. from `Normal(0, 1e-3)`.
pub fn init_arch_params(templates: &Templates, seed: u64) -> ArchParams {
    let mut rng = seed::rng_for(seed, "arch-init");
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
    let ne = templates.extraction.edges.len();
    let nd = templates.fusion.edges.len();
    let ns = templates.pyramid.edges.len();
    let alpha_e = (0..ne).map(|_| draw(MicroOpKind::COUNT)).collect();
    let beta_e = draw(ne);
    let alpha_d = (0..nd).map(|_| draw(MicroOpKind::COUNT)).collect();
    let beta_d = draw(nd);
    let alpha_s = (0..ns).map(|_| draw(PoolOpKind::COUNT)).collect();
    ArchParams {
        alpha_e,
        beta_e,
        alpha_d,
        beta_d,
        alpha_s,
    }
}

fn check_rows(name: &str, rows: &[Vec<f64>], count: usize, width: usize) -> Result<(), String> {
    if rows.len() != count {
        return Err(format!("{name} has {} rows, expected {count}", rows.len()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(format!("{name} row has {} entries, expected {width}", r.len()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!("{name} contains non-finite values"));
    }
    Ok(())
}

impl ArchParams {
    pub fn validate(&self, templates: &Templates) -> Result<(), String> {
        let check_cell = |alpha: &[Vec<f64>], beta: &[f64], t: &CellTemplate, tag: &str| {
            check_rows(&format!("alpha_{tag}"), alpha, t.edges.len(), MicroOpKind::COUNT)?;
            if beta.len() != t.edges.len() {
                return Err(format!("beta_{tag} has {} entries, expected {}", beta.len(), t.edges.len()));
            }
            if beta.iter().any(|v| !v.is_finite()) {
                return Err(format!("beta_{tag} contains non-finite values"));
            }
            Ok(())
        };
        check_cell(&self.alpha_e, &self.beta_e, &templates.extraction, "e")?;
        check_cell(&self.alpha_d, &self.beta_d, &templates.fusion, "d")?;
        check_rows("alpha_s", &self.alpha_s, templates.pyramid.edges.len(), PoolOpKind::COUNT)
    }

    /// Every logit in a fixed order, for bitwise comparisons.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.alpha_e.iter().flatten());
        out.extend(&self.beta_e);
        out.extend(self.alpha_d.iter().flatten());
        out.extend(&self.beta_d);
        out.extend(self.alpha_s.iter().flatten());
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ArchParamsFile {
    version: u32,
    config: GenotypeConfig,
    #[serde(flatten)]
    params: ArchParams,
}

pub fn arch_params_to_string(params: &ArchParams, config: &GenotypeConfig) -> String {
    let file = ArchParamsFile {
        version: ARCH_PARAMS_VERSION,
        config: config.clone(),
        params: params.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("arch params serialize");
    s.push('\n');
    s
}

pub fn save_arch_params(
    path: &Path,
    params: &ArchParams,
    config: &GenotypeConfig,
) -> Result<(), GenotypeError> {
    std::fs::write(path, arch_params_to_string(params, config)).map_err(|source| GenotypeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn arch_params_from_str(text: &str) -> Result<(ArchParams, GenotypeConfig), GenotypeError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GenotypeError::Malformed(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| GenotypeError::Malformed("missing `version`".into()))?;
    if version != ARCH_PARAMS_VERSION as u64 {
        return Err(GenotypeError::VersionMismatch {
            expected: ARCH_PARAMS_VERSION,
            found: version,
        });
    }
    let file: ArchParamsFile =
        serde_json::from_value(value).map_err(|e| GenotypeError::Malformed(e.to_string()))?;
    file.params
        .validate(&super::build_templates())
        .map_err(GenotypeError::Invalid)?;
    Ok((file.params, file.config))
}

pub fn load_arch_params(path: &Path) -> Result<(ArchParams, GenotypeConfig), GenotypeError> {
    let text = std::fs::read_to_string(path).map_err(|source| GenotypeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    arch_params_from_str(&text)
}
