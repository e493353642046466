//! Run configuration: defaults, an optional TOML file and `key=value`
//! overrides, merged in that order of increasing precedence.

use std::path::Path;

use crowd_nas::bilevel::{LossKind, RetrainConfig, SearchConfig};
use crowd_nas::data::{AugmentConfig, SceneConfig};
use crowd_nas::seed::derive_seed;
use crowd_nas::supernet::NetConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub size: usize,
    pub min_count: usize,
    pub max_count: usize,
    pub near_radius: f32,
    pub far_radius: f32,
    pub density_radius: f32,
    pub num_train: usize,
    pub num_test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        DataSection {
            size: s.size,
            min_count: s.min_count,
            max_count: s.max_count,
            near_radius: s.near_radius,
            far_radius: s.far_radius,
            density_radius: s.density_radius,
            num_train: 200,
            num_test: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub m: usize,
    pub c: usize,
    pub k: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub weight_lr_max: f64,
    pub weight_lr_min: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    pub density_scale: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        SearchSection {
            m: s.net.m,
            c: s.net.c,
            k: s.net.k,
            epochs: s.epochs,
            warmup_epochs: s.warmup_epochs,
            batch_size: s.batch_size,
            weight_lr_max: s.weight_lr_max,
            weight_lr_min: s.weight_lr_min,
            weight_decay: s.weight_decay,
            arch_lr: s.arch_lr,
            arch_weight_decay: s.arch_weight_decay,
            arch_beta1: s.arch_beta1,
            arch_beta2: s.arch_beta2,
            density_scale: s.density_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainSection {
    pub m: usize,
    pub c: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub density_scale: f64,
    pub augment: bool,
    pub flip: bool,
    pub rotate: bool,
    pub scale_min: f32,
    pub scale_max: f32,
}

impl Default for RetrainSection {
    fn default() -> Self {
        let r = RetrainConfig::default();
        let a = AugmentConfig::default();
        RetrainSection {
            m: r.net.m,
            c: r.net.c,
            iterations: r.iterations,
            batch_size: r.batch_size,
            lr: r.lr,
            lr_decay: r.lr_decay,
            weight_decay: r.weight_decay,
            loss: r.loss,
            density_scale: r.density_scale,
            augment: r.augment.is_some(),
            flip: a.flip,
            rotate: a.rotate,
            scale_min: a.scale_min,
            scale_max: a.scale_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub batch_size: usize,
    /// Number of test scenes rendered as images by `report`.
    pub report_maps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            batch_size: 8,
            report_maps: 4,
        }
    }
}

/// Everything that determines a run. Component seeds derive from `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub search: SearchSection,
    pub retrain: RetrainSection,
    pub eval: EvalSection,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a `key=value` override value as a TOML scalar, falling back to a
/// bare string so `retrain.loss=mse` works without quotes.
fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn apply_override(root: &mut Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is empty or malformed")));
    }
    let (leaf, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        table = match table.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(CliError::Config(format!("unknown config section `{p}` in `{key}`"))),
        };
    }
    table.insert((*leaf).to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`, then `seed`.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default()).map_err(|e| CliError::Internal(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Table = text
                .parse()
                .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
            merge(&mut table, parsed);
        }
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.data.num_train == 0 {
            return Err(CliError::Config("data.num_train must be positive".into()));
        }
        let s = &self.search;
        NetConfig::new(s.m, s.c, s.k).map_err(|e| CliError::Config(format!("search: {e}")))?;
        if s.epochs == 0 || s.batch_size == 0 {
            return Err(CliError::Config("search.epochs and search.batch_size must be positive".into()));
        }
        if s.warmup_epochs > s.epochs {
            return Err(CliError::Config(format!(
                "search.warmup_epochs ({}) exceeds search.epochs ({})",
                s.warmup_epochs, s.epochs
            )));
        }
        let r = &self.retrain;
        NetConfig::new(r.m, r.c, 1).map_err(|e| CliError::Config(format!("retrain: {e}")))?;
        if r.iterations == 0 || r.batch_size == 0 {
            return Err(CliError::Config("retrain.iterations and retrain.batch_size must be positive".into()));
        }
        if !(0.0 < r.scale_min && r.scale_min <= r.scale_max && r.scale_max <= 1.0) {
            return Err(CliError::Config(format!(
                "retrain zoom range must satisfy 0 < scale_min <= scale_max <= 1, got {}..{}",
                r.scale_min, r.scale_max
            )));
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        let d = &self.data;
        SceneConfig {
            size: d.size,
            min_count: d.min_count,
            max_count: d.max_count,
            near_radius: d.near_radius,
            far_radius: d.far_radius,
            density_radius: d.density_radius,
        }
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            net: NetConfig { m: s.m, c: s.c, k: s.k },
            epochs: s.epochs,
            warmup_epochs: s.warmup_epochs,
            batch_size: s.batch_size,
            weight_lr_max: s.weight_lr_max,
            weight_lr_min: s.weight_lr_min,
            weight_decay: s.weight_decay,
            arch_lr: s.arch_lr,
            arch_weight_decay: s.arch_weight_decay,
            arch_beta1: s.arch_beta1,
            arch_beta2: s.arch_beta2,
            density_scale: s.density_scale,
            seed: derive_seed(self.seed, "search"),
        }
    }

    /// Size of the retrained network. Derived networks have no partial
    /// channels, so `k` is fixed at 1.
    pub fn retrain_net(&self) -> NetConfig {
        NetConfig {
            m: self.retrain.m,
            c: self.retrain.c,
            k: 1,
        }
    }

    pub fn retrain_config(&self) -> RetrainConfig {
        let r = &self.retrain;
        RetrainConfig {
            net: self.retrain_net(),
            iterations: r.iterations,
            batch_size: r.batch_size,
            lr: r.lr,
            lr_decay: r.lr_decay,
            weight_decay: r.weight_decay,
            loss: r.loss,
            density_scale: r.density_scale,
            augment: r.augment.then(|| AugmentConfig {
                flip: r.flip,
                rotate: r.rotate,
                scale_min: r.scale_min,
                scale_max: r.scale_max,
            }),
            seed: derive_seed(self.seed, "retrain"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_match_the_core_defaults() {
        let cfg = RunConfig::resolve(None, &[], None).unwrap();
        assert_eq!(cfg.scene_config(), SceneConfig::default());
        let s = cfg.search_config();
        assert_eq!(s.epochs, SearchConfig::default().epochs);
        assert_eq!(cfg.retrain_config().loss, LossKind::Spp);
    }

    #[test]
    fn cli_beats_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[search]\nepochs = 6\nwarmup_epochs = 2\n[retrain]\nloss = \"mse\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &strings(&["search.epochs=8", "retrain.loss=spp"]), None).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.search.epochs, 8);
        assert_eq!(cfg.search.warmup_epochs, 2);
        assert_eq!(cfg.retrain.loss, LossKind::Spp);
        let cfg = RunConfig::resolve(Some(&path), &strings(&["seed=4"]), Some(9)).unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        for o in ["search.epochz=3", "nosuch.key=1", "search.epochs=\"many\""] {
            let err = RunConfig::resolve(None, &strings(&[o]), None).unwrap_err();
            assert_eq!(err.code(), "E_CONFIG", "{o}");
        }
        let err = RunConfig::resolve(None, &strings(&["noequals"]), None).unwrap_err();
        assert_eq!(err.code(), "E_USAGE");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for o in ["search.c=12", "search.warmup_epochs=50", "data.size=30", "retrain.scale_min=0"] {
            let err = RunConfig::resolve(None, &strings(&[o]), None).unwrap_err();
            assert_eq!(err.code(), "E_CONFIG", "{o}");
        }
    }

    #[test]
    fn component_seeds_are_distinct() {
        let cfg = RunConfig::default();
        let seeds = [cfg.data_seed(), cfg.search_config().seed, cfg.retrain_config().seed];
        assert_ne!(seeds[0], seeds[1]);
        assert_ne!(seeds[1], seeds[2]);
    }
}
