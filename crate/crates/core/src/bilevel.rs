//! Alternating weight/architecture search and retraining of derived
//! networks.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_lr, step_decay_lr, Adam, Tape};
use crate::data::{augment, AugmentConfig, Scene};
use crate::error::{TensorError, TrainError};
use crate::search_space::{derive_genotype, init_arch_params, ArchParams, Genotype, PoolOpKind};
use crate::seed;
use crate::spploss::{spp_loss, Pyramid};
use crate::supernet::{ArchStore, DerivedNet, Mode, NetConfig, Supernet};
use crate::tensor::Tensor;

/// Losses above this (or non-finite) abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub net: NetConfig,
    pub epochs: usize,
    /// Epochs updating weights only, before architecture updates start.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub weight_lr_max: f64,
    pub weight_lr_min: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    /// Ground-truth densities are multiplied by this during training. The
    /// search keeps raw densities: with its short schedule at fixed learning
    /// rates, amplified targets leave most steps fitting output magnitude.
    pub density_scale: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            net: NetConfig { m: 2, c: 16, k: 4 },
            epochs: 20,
            warmup_epochs: 10,
            batch_size: 8,
            weight_lr_max: 1e-3,
            weight_lr_min: 4e-4,
            weight_decay: 1e-4,
            arch_lr: 6e-4,
            arch_weight_decay: 1e-3,
            arch_beta1: 0.5,
            arch_beta2: 0.999,
            density_scale: 1.0,
            seed: 0,
        }
    }
}

/// One row of a training log. `wall_clock_s` is the only
/// non-deterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub weight_loss: f64,
    /// Mean architecture-step loss; NaN while only weights are trained.
    pub arch_loss: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub arch: ArchParams,
    pub genotype: Genotype,
    /// Loss on the weight half right after initialization.
    pub initial_loss: f64,
    /// Loss on the weight half after the last epoch, same evaluation.
    pub final_loss: f64,
    pub log: Vec<LogRow>,
}

fn batch_tensors(scenes: &[&Scene], scale: f64) -> Result<(Tensor<f32>, Tensor<f32>), TensorError> {
    let images: Vec<&Tensor<f32>> = scenes.iter().map(|s| &s.image).collect();
    let gts: Vec<&Tensor<f32>> = scenes.iter().map(|s| &s.density).collect();
    let gt = Tensor::stack(&gts)?.map(|v| v * scale as f32);
    Ok((Tensor::stack(&images)?, gt))
}

fn check_loss(loss: f64, step: usize) -> Result<f64, TrainError> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(TrainError::Diverged { step, loss });
    }
    Ok(loss)
}

/// Seeded 50/50 split of the training scenes into a weight half and an
/// architecture half.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng_for(seed, "split"));
    let arch = idx.split_off(n / 2);
    (idx, arch)
}

struct Searcher<'a> {
    cfg: &'a SearchConfig,
    net: Supernet<f32>,
    arch: ArchStore<f32>,
    scenes: &'a [Scene],
}

impl Searcher<'_> {
    /// Loss of one batch; gradients for the weights or the architecture.
    fn step_loss(
        &self,
        batch: &[usize],
        mask_rng: &mut seed::Rng,
        weights_grad: bool,
        arch_grad: bool,
    ) -> Result<(f64, Vec<Tensor<f32>>, Vec<Tensor<f32>>), TrainError> {
        let scenes: Vec<&Scene> = batch.iter().map(|&i| &self.scenes[i]).collect();
        let (x, g) = batch_tensors(&scenes, self.cfg.density_scale)?;
        let mut tape = Tape::new();
        let binding = self.net.params.bind(&mut tape, weights_grad);
        let vars = self.arch.bind(&mut tape, arch_grad)?;
        let xv = tape.constant(x);
        let gv = tape.constant(g);
        let (est, _) = self.net.forward(&mut tape, &binding, &vars, xv, mask_rng)?;
        let loss = spp_loss(&mut tape, est, gv, Pyramid::Mixed(&vars.alpha_s))?;
        let value = tape.value(loss).item() as f64;
        if !(weights_grad || arch_grad) {
            return Ok((value, Vec::new(), Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let wg = if weights_grad {
            self.net.params.gradients(&binding, &grads)
        } else {
            Vec::new()
        };
        let ag = if arch_grad {
            self.arch.gradients(&vars, &grads)
        } else {
            Vec::new()
        };
        Ok((value, wg, ag))
    }

    /// Mean loss over `indices` in fixed batches with a fixed mask stream.
    fn evaluate(&self, indices: &[usize]) -> Result<f64, TrainError> {
        let mut rng = seed::rng_for(self.cfg.seed, "search-eval-masks");
        let mut total = 0.0;
        let mut n = 0;
        for batch in indices.chunks(self.cfg.batch_size) {
            let (l, _, _) = self.step_loss(batch, &mut rng, false, false)?;
            total += l * batch.len() as f64;
            n += batch.len();
        }
        Ok(total / n as f64)
    }
}

/// Runs the alternating search on `train` and derives the genotype.
pub fn search(train: &[Scene], cfg: &SearchConfig) -> Result<SearchOutcome, TrainError> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(TrainError::Schedule("epochs and batch_size must be positive".into()));
    }
    if cfg.warmup_epochs > cfg.epochs {
        return Err(TrainError::Schedule(format!(
            "warmup ({}) exceeds epochs ({})",
            cfg.warmup_epochs, cfg.epochs
        )));
    }
    let (w_half, a_half) = split_halves(train.len(), cfg.seed);
    if w_half.is_empty() {
        return Err(TrainError::EmptySplit("weight"));
    }
    if a_half.is_empty() {
        return Err(TrainError::EmptySplit("architecture"));
    }
    let net = Supernet::new(cfg.net, seed::derive_seed(cfg.seed, "supernet"))?;
    let init = init_arch_params(&net.templates, seed::derive_seed(cfg.seed, "arch"));
    let arch = ArchStore::from_params(&init, &net.templates);
    let mut s = Searcher {
        cfg,
        net,
        arch,
        scenes: train,
    };
    let start = Instant::now();
    let initial_loss = check_loss(s.evaluate(&w_half)?, 0)?;
    let mut w_opt = Adam::new(0.9, 0.999, cfg.weight_decay);
    let mut a_opt = Adam::new(cfg.arch_beta1, cfg.arch_beta2, cfg.arch_weight_decay);
    let mut order_rng = seed::rng_for(cfg.seed, "search-order");
    let mut mask_rng = seed::rng_for(cfg.seed, "search-masks");
    let steps_per_epoch = w_half.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut a_order = a_half.clone();
    let mut a_pos = a_order.len();
    for epoch in 0..cfg.epochs {
        let mut order = w_half.clone();
        order.shuffle(&mut order_rng);
        let (mut w_sum, mut a_sum, mut a_count) = (0.0, 0.0, 0usize);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total_steps.saturating_sub(1), cfg.weight_lr_max, cfg.weight_lr_min);
            let (l, wg, _) = s.step_loss(batch, &mut mask_rng, true, false)?;
            w_sum += check_loss(l, step)?;
            w_opt.step(&mut s.net.params, &wg, lr);
            if epoch >= cfg.warmup_epochs {
                if a_pos + cfg.batch_size > a_order.len() {
                    a_order.shuffle(&mut order_rng);
                    a_pos = 0;
                }
                let end = (a_pos + cfg.batch_size).min(a_order.len());
                let a_batch = a_order[a_pos..end].to_vec();
                a_pos = end;
                let (l, _, ag) = s.step_loss(&a_batch, &mut mask_rng, false, true)?;
                a_sum += check_loss(l, step)?;
                a_count += 1;
                a_opt.step(&mut s.arch.store, &ag, cfg.arch_lr);
            }
            step += 1;
        }
        log.push(LogRow {
            epoch,
            step,
            lr,
            weight_loss: w_sum / steps_per_epoch as f64,
            arch_loss: if a_count > 0 { a_sum / a_count as f64 } else { f64::NAN },
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    let final_loss = check_loss(s.evaluate(&w_half)?, step)?;
    let arch = s.arch.to_params();
    let genotype = derive_genotype(&arch, &s.net.templates, cfg.net.genotype_config(cfg.seed));
    Ok(SearchOutcome {
        arch,
        genotype,
        initial_loss,
        final_loss,
        log,
    })
}

/// Training objective for retraining a derived network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Pixel MSE plus the genotype's pooling pyramid.
    Spp,
    /// Pixel MSE only.
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub net: NetConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied every `iterations / 5` steps.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub density_scale: f64,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            net: NetConfig { m: 4, c: 32, k: 4 },
            iterations: 600,
            batch_size: 8,
            lr: 1e-3,
            lr_decay: 0.8,
            weight_decay: 1e-4,
            loss: LossKind::Spp,
            density_scale: 100.0,
            augment: Some(AugmentConfig::default()),
            seed: 0,
        }
    }
}

/// Trains the derived network for `genotype` from scratch.
pub fn retrain(
    genotype: &Genotype,
    train: &[Scene],
    cfg: &RetrainConfig,
) -> Result<(DerivedNet<f32>, Vec<LogRow>), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if cfg.batch_size == 0 || cfg.iterations == 0 {
        return Err(TrainError::Schedule("iterations and batch_size must be positive".into()));
    }
    let mut net = DerivedNet::new(genotype, cfg.net, seed::derive_seed(cfg.seed, "derived"))?;
    let mut opt = Adam::new(0.9, 0.999, cfg.weight_decay);
    let mut order_rng = seed::rng_for(cfg.seed, "retrain-order");
    let mut aug_rng = seed::rng_for(cfg.seed, "retrain-augment");
    let interval = (cfg.iterations / 5).max(1);
    let log_every = interval.min(50).max(1);
    let start = Instant::now();
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut log = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0usize;
    let mut epoch = 0;
    let pyramid: Vec<PoolOpKind> = genotype.spp.clone();
    for step in 0..cfg.iterations {
        if pos + cfg.batch_size > order.len() {
            if !order.is_empty() {
                epoch += 1;
            }
            order = (0..train.len()).collect();
            order.shuffle(&mut order_rng);
            pos = 0;
        }
        let end = (pos + cfg.batch_size).min(order.len());
        let mut scenes = Vec::with_capacity(end - pos);
        for &i in &order[pos..end] {
            scenes.push(match &cfg.augment {
                Some(a) => augment(&train[i], a, &mut aug_rng)?,
                None => train[i].clone(),
            });
        }
        pos = end;
        let refs: Vec<&Scene> = scenes.iter().collect();
        let (x, g) = batch_tensors(&refs, cfg.density_scale)?;
        let mut tape = Tape::new();
        let binding = net.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let gv = tape.constant(g);
        let (est, stats) = net.forward(&mut tape, &binding, xv, Mode::Train)?;
        let loss = match cfg.loss {
            LossKind::Spp => spp_loss(&mut tape, est, gv, Pyramid::Fixed(&pyramid))?,
            LossKind::Mse => tape.mse(est, gv)?,
        };
        let value = check_loss(tape.value(loss).item() as f64, step)?;
        let grads = tape.backward(loss)?;
        let wg = net.params.gradients(&binding, &grads);
        let lr = step_decay_lr(cfg.lr, cfg.lr_decay, interval, step);
        opt.step(&mut net.params, &wg, lr);
        net.update_running(&stats);
        window += value;
        window_n += 1;
        if (step + 1) % log_every == 0 || step + 1 == cfg.iterations {
            log.push(LogRow {
                epoch,
                step: step + 1,
                lr,
                weight_loss: window / window_n as f64,
                arch_loss: f64::NAN,
                wall_clock_s: start.elapsed().as_secs_f64(),
            });
            window = 0.0;
            window_n = 0;
        }
    }
    Ok((net, log))
}

/// Density predictions in count units (divided by `density_scale`), using
/// running batch-norm statistics.
pub fn predict_densities(
    net: &DerivedNet<f32>,
    scenes: &[Scene],
    batch_size: usize,
    density_scale: f64,
) -> Result<Vec<Tensor<f32>>, TrainError> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(batch_size.max(1)) {
        let images: Vec<&Tensor<f32>> = chunk.iter().map(|s| &s.image).collect();
        let x = Tensor::stack(&images)?;
        let y = net.predict(&x, Mode::Eval)?;
        for i in 0..chunk.len() {
            out.push(y.sample(i).map(|v| v / density_scale as f32));
        }
    }
    Ok(out)
}
