//! The six pipeline commands. Every artifact except the `wall_clock_s`
//! log column is a pure function of the resolved config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crowd_nas::bilevel::{predict_densities, retrain as retrain_net, search as run_search, LogRow};
use crowd_nas::data::{
    density_to_png, evaluate, image_to_png, load_dataset, save_dataset, synthesize, Dataset, Metrics,
};
use crowd_nas::search_space::{
    build_templates, count_params, derive_genotype, load_arch_params, save_arch_params, CellGene, Genotype,
};
use crowd_nas::supernet::{load_weights, save_weights, DerivedNet};
use crowd_nas::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::Common;

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Resolved artifact locations.
struct Paths {
    out: PathBuf,
    dataset: PathBuf,
    arch: PathBuf,
    genotype: PathBuf,
    weights: PathBuf,
}

impl Paths {
    fn new(c: &Common) -> Self {
        let out = c.out.clone();
        Paths {
            dataset: c.dataset.clone().unwrap_or_else(|| out.join("dataset")),
            arch: c.arch.clone().unwrap_or_else(|| out.join("arch_params.json")),
            genotype: c.genotype.clone().unwrap_or_else(|| out.join("genotype.json")),
            weights: c.weights.clone().unwrap_or_else(|| out.join("weights.bin")),
            out,
        }
    }

    fn search_log(&self) -> PathBuf {
        self.out.join("search_log.csv")
    }

    fn search_summary(&self) -> PathBuf {
        self.out.join("search_summary.json")
    }

    fn retrain_log(&self) -> PathBuf {
        self.out.join("retrain_log.csv")
    }

    fn metrics(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    fn eval_log(&self) -> PathBuf {
        self.out.join("eval_log.csv")
    }

    fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

#[derive(Serialize)]
struct Plan<'a> {
    command: &'a str,
    config: &'a RunConfig,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

/// Shared prologue: resolve the config, check inputs exist, and in dry-run
/// mode print the plan. Returns `None` when the command should stop.
fn prepare(command: &str, c: &Common, inputs: &[&Path], outputs: &[&Path]) -> Result<Option<RunConfig>> {
    let cfg = RunConfig::resolve(c.config.as_deref(), &c.overrides, c.seed)?;
    for p in inputs {
        if !p.exists() {
            return Err(CliError::Input(format!("missing input {}", p.display())));
        }
    }
    if c.dry_run {
        let show = |ps: &[&Path]| ps.iter().map(|p| p.display().to_string()).collect();
        let plan = Plan {
            command,
            config: &cfg,
            inputs: show(inputs),
            outputs: show(outputs),
        };
        say!(
            "{}",
            serde_json::to_string_pretty(&plan).map_err(|e| CliError::Internal(e.to_string()))?
        );
        return Ok(None);
    }
    for p in outputs {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    Ok(Some(cfg))
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let fail = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let fail = |e: csv::Error| CliError::Input(format!("cannot read {}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fail)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(fail)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_inputs(p: &Paths) -> Result<(Dataset, Genotype)> {
    let ds = load_dataset(&p.dataset).map_err(CliError::input)?;
    let g = Genotype::load(&p.genotype)?;
    Ok((ds, g))
}

fn load_net(cfg: &RunConfig, p: &Paths, g: &Genotype) -> Result<DerivedNet<f32>> {
    let mut net = DerivedNet::new(g, cfg.retrain_net(), 0)?;
    load_weights(&mut net, &p.weights).map_err(CliError::input)?;
    Ok(net)
}

pub fn gen_data(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let Some(cfg) = prepare("gen-data", c, &[], &[&p.dataset.join("manifest.json")])? else {
        return Ok(());
    };
    let ds = synthesize(&cfg.scene_config(), cfg.data.num_train, cfg.data.num_test, cfg.data_seed())?;
    save_dataset(&ds, &p.dataset).map_err(CliError::io)?;
    say!(
        "wrote {} train and {} test scenes to {}",
        ds.train.len(),
        ds.test.len(),
        p.dataset.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SearchSummary {
    initial_loss: f64,
    final_loss: f64,
}

pub fn search(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let outputs = [p.arch.as_path(), &p.search_log(), &p.search_summary()];
    let Some(cfg) = prepare("search", c, &[&p.dataset], &outputs)? else {
        return Ok(());
    };
    let ds = load_dataset(&p.dataset).map_err(CliError::input)?;
    let outcome = run_search(&ds.train, &cfg.search_config())?;
    save_arch_params(&p.arch, &outcome.arch, &outcome.genotype.config).map_err(CliError::io)?;
    write_csv(&p.search_log(), &outcome.log)?;
    let summary = SearchSummary {
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_text(&p.search_summary(), &text)?;
    say!(
        "search loss {:.6} -> {:.6}; arch params in {}",
        outcome.initial_loss,
        outcome.final_loss,
        p.arch.display()
    );
    Ok(())
}

pub fn derive(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let Some(_) = prepare("derive", c, &[&p.arch], &[&p.genotype])? else {
        return Ok(());
    };
    let (params, gcfg) = load_arch_params(&p.arch)?;
    let templates = build_templates();
    let genotype = derive_genotype(&params, &templates, gcfg);
    genotype
        .validate(&templates)
        .map_err(|e| CliError::Internal(format!("derived genotype is invalid: {e}")))?;
    genotype.save(&p.genotype).map_err(CliError::io)?;
    say!("genotype written to {}", p.genotype.display());
    Ok(())
}

pub fn retrain(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let outputs = [p.weights.as_path(), &p.retrain_log()];
    let Some(cfg) = prepare("retrain", c, &[&p.dataset, &p.genotype], &outputs)? else {
        return Ok(());
    };
    let (ds, g) = load_inputs(&p)?;
    let (net, log) = retrain_net(&g, &ds.train, &cfg.retrain_config())?;
    save_weights(&net, &p.weights).map_err(CliError::io)?;
    write_csv(&p.retrain_log(), &log)?;
    let last = log.last().map_or(f64::NAN, |r| r.weight_loss);
    say!("retrained {} steps, last loss {last:.6}; weights in {}", cfg.retrain.iterations, p.weights.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    mae: f64,
    mse: f64,
    psnr: f64,
    ssim: f64,
    params: usize,
}

#[derive(Serialize)]
struct EvalRow {
    index: usize,
    gt_count: f64,
    pred_count: f64,
    abs_error: f64,
    wall_clock_s: f64,
}

fn total(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum()
}

pub fn eval(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let outputs = [p.metrics(), p.eval_log()];
    let Some(cfg) = prepare(
        "eval",
        c,
        &[&p.dataset, &p.genotype, &p.weights],
        &[&outputs[0], &outputs[1]],
    )?
    else {
        return Ok(());
    };
    let (ds, g) = load_inputs(&p)?;
    if ds.test.is_empty() {
        return Err(CliError::Input(format!("dataset {} has no test scenes", p.dataset.display())));
    }
    let net = load_net(&cfg, &p, &g)?;
    let start = Instant::now();
    let mut preds = Vec::with_capacity(ds.test.len());
    let mut rows = Vec::with_capacity(ds.test.len());
    for chunk in ds.test.chunks(cfg.eval.batch_size) {
        let out = predict_densities(&net, chunk, cfg.eval.batch_size, cfg.retrain.density_scale)?;
        let elapsed = start.elapsed().as_secs_f64();
        for (scene, pred) in chunk.iter().zip(out) {
            let (gt_count, pred_count) = (total(&scene.density), total(&pred));
            rows.push(EvalRow {
                index: rows.len(),
                gt_count,
                pred_count,
                abs_error: (pred_count - gt_count).abs(),
                wall_clock_s: elapsed,
            });
            preds.push(pred);
        }
    }
    let gts: Vec<Tensor<f32>> = ds.test.iter().map(|s| s.density.clone()).collect();
    let m: Metrics = evaluate(&preds, &gts).map_err(|e| CliError::Internal(e.to_string()))?;
    let params = count_params(&g, &cfg.retrain_net())?;
    write_csv(
        &p.metrics(),
        &[MetricsRow {
            mae: m.mae,
            mse: m.mse,
            psnr: m.psnr,
            ssim: m.ssim,
            params,
        }],
    )?;
    write_csv(&p.eval_log(), &rows)?;
    say!(
        "MAE {:.4}  MSE {:.4}  PSNR {:.2} dB  SSIM {:.4}  params {params}",
        m.mae, m.mse, m.psnr, m.ssim
    );
    Ok(())
}

fn gene_table(out: &mut String, title: &str, genes: &[CellGene]) {
    let _ = writeln!(out, "### {title}\n\n| dst | src | op |\n|---|---|---|");
    for g in genes {
        let _ = writeln!(out, "| {} | {} | {} |", g.dst, g.src, g.op);
    }
    out.push('\n');
}

pub fn report(c: &Common) -> Result<()> {
    let p = Paths::new(c);
    let dir = p.report_dir();
    let summary_path = dir.join("summary.md");
    let inputs = [
        p.dataset.as_path(),
        &p.genotype,
        &p.weights,
        &p.metrics(),
        &p.retrain_log(),
    ];
    let Some(cfg) = prepare("report", c, &inputs, &[&summary_path, &dir.join("genotype.dot")])? else {
        return Ok(());
    };
    let (ds, g) = load_inputs(&p)?;
    let metrics: Vec<MetricsRow> = read_csv(&p.metrics())?;
    let m = metrics
        .first()
        .ok_or_else(|| CliError::Input(format!("{} has no rows", p.metrics().display())))?;
    let retrain_log: Vec<LogRow> = read_csv(&p.retrain_log())?;
    let search_log: Option<Vec<LogRow>> = match p.search_log().exists() {
        true => Some(read_csv(&p.search_log())?),
        false => None,
    };
    let search_summary: Option<SearchSummary> = match std::fs::read(p.search_summary()) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(CliError::input)?),
        Err(_) => None,
    };

    let mut s = String::new();
    let _ = writeln!(s, "# Run summary\n\nRoot seed: {}\n", cfg.seed);
    let _ = writeln!(s, "## Test metrics\n");
    let _ = writeln!(s, "| MAE | MSE | PSNR (dB) | SSIM | params |\n|---|---|---|---|---|");
    let _ = writeln!(s, "| {:.4} | {:.4} | {:.2} | {:.4} | {} |\n", m.mae, m.mse, m.psnr, m.ssim, m.params);
    let _ = writeln!(s, "MSE is the root of the mean squared count error.\n");

    let _ = writeln!(s, "## Genotype\n");
    let _ = writeln!(
        s,
        "Searched with M={}, C={}, K={}; retrained with M={}, C={}.\n",
        g.config.m, g.config.c, g.config.k, cfg.retrain.m, cfg.retrain.c
    );
    gene_table(&mut s, "Extraction cell", &g.extraction);
    gene_table(&mut s, "Fusion cell", &g.fusion);
    let pyramid: Vec<String> = g.spp.iter().map(|op| op.to_string()).collect();
    let _ = writeln!(s, "Loss pyramid: {}\n", pyramid.join(" -> "));
    let _ = writeln!(s, "The graph is in `genotype.dot`.\n");

    let _ = writeln!(s, "## Training\n");
    if let (Some(log), Some(sum)) = (&search_log, &search_summary) {
        let _ = writeln!(
            s,
            "Search: {} epochs; weight-half loss {:.6} after initialization, {:.6} after search (ratio {:.3}).\n",
            log.len(),
            sum.initial_loss,
            sum.final_loss,
            sum.final_loss / sum.initial_loss
        );
    }
    if let (Some(first), Some(last)) = (retrain_log.first(), retrain_log.last()) {
        let _ = writeln!(
            s,
            "Retrain ({:?} loss): {} steps; logged loss {:.6} at step {}, {:.6} at step {}.\n",
            cfg.retrain.loss, last.step, first.weight_loss, first.step, last.weight_loss, last.step
        );
    }

    let shown = cfg.eval.report_maps.min(ds.test.len());
    if shown > 0 {
        let net = load_net(&cfg, &p, &g)?;
        let preds = predict_densities(&net, &ds.test[..shown], cfg.eval.batch_size, cfg.retrain.density_scale)?;
        let _ = writeln!(s, "## Density maps\n");
        let _ = writeln!(
            s,
            "Ground truth and prediction share one intensity scale per scene.\n\n\
             | scene | count | predicted | image | ground truth | prediction |\n|---|---|---|---|---|---|"
        );
        for (i, (scene, pred)) in ds.test.iter().zip(&preds).enumerate() {
            let peak = scene
                .density
                .data()
                .iter()
                .chain(pred.data())
                .copied()
                .fold(0.0f32, f32::max);
            let names = [
                format!("scene_{i:04}_image.png"),
                format!("scene_{i:04}_gt.png"),
                format!("scene_{i:04}_pred.png"),
            ];
            image_to_png(&scene.image, &dir.join(&names[0])).map_err(CliError::io)?;
            density_to_png(&scene.density, Some(peak), &dir.join(&names[1])).map_err(CliError::io)?;
            density_to_png(pred, Some(peak), &dir.join(&names[2])).map_err(CliError::io)?;
            let _ = writeln!(
                s,
                "| {i} | {} | {:.2} | ![]({}) | ![]({}) | ![]({}) |",
                scene.count(),
                total(pred),
                names[0],
                names[1],
                names[2]
            );
        }
        s.push('\n');
    }
    write_text(&dir.join("genotype.dot"), &g.to_dot())?;
    write_text(&summary_path, &s)?;
    say!("report written to {}", summary_path.display());
    Ok(())
}
