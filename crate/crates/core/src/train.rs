//! Optimization loop: shuffled minibatches with random D4 transforms, Adam,
//! plateau learning-rate decay, linear KL annealing and early stopping.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dihedral, PatchSet, D4_COUNT};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Real};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::vae::{save_checkpoint, EvalOptions, LossParts, VaeModel};
use crate::{Error, Image, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience_epochs: usize,
    pub early_stop_patience_epochs: usize,
    pub early_stop_min_delta: f64,
    pub beta: f64,
    pub kl_anneal_epochs: usize,
    /// Budget of sample presentations (patches fed through a training step).
    pub max_steps: u64,
    pub max_epochs: Option<usize>,
    /// Wall-clock budget in seconds, checked after each epoch.
    pub time_limit_secs: Option<f64>,
    pub grad_clip_norm: f64,
    /// Draw one random D4 transform per patch presentation.
    pub augment: bool,
    pub seed: u64,
    /// When set, best/last checkpoints and the report are written here.
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            initial_lr: 1e-3,
            lr_decay_factor: 0.5,
            lr_patience_epochs: 30,
            early_stop_patience_epochs: 100,
            early_stop_min_delta: 1e-6,
            beta: 1.0,
            kl_anneal_epochs: 0,
            max_steps: 22_000_000,
            max_epochs: None,
            time_limit_secs: None,
            grad_clip_norm: 100.0,
            augment: true,
            seed: 0,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_patience_epochs == 0 || self.early_stop_patience_epochs == 0 {
            return Err(Error::Config("patience values must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("initial_lr must be > 0 and lr_decay_factor in (0, 1]".into()));
        }
        Ok(())
    }
}

/// KL weight at a 1-based epoch: a linear ramp to `beta` over
/// `kl_anneal_epochs`, constant afterwards.
pub fn effective_beta(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.kl_anneal_epochs == 0 {
        cfg.beta
    } else {
        (epoch as f64 / cfg.kl_anneal_epochs as f64).min(1.0) * cfg.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    MaxEpochs,
    TimeLimit,
    /// Validation loss failed to improve within the early-stop patience.
    Plateau,
    /// A non-finite loss or parameter appeared; the best earlier model is returned.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub val_total: f64,
    pub val_recon: f64,
    pub val_kl: f64,
    pub lr: f64,
    pub beta: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub samples_seen: u64,
    pub steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Plateau bookkeeping for learning-rate decay and early stopping.
#[derive(Clone, Debug)]
pub struct PlateauTracker {
    pub lr: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    min_delta: f64,
    best_lr: f64,
    since_lr: usize,
    best_stop: f64,
    since_stop: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlateauDecision {
    pub lr_decayed: bool,
    pub stop: bool,
}

impl PlateauTracker {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.initial_lr,
            factor: cfg.lr_decay_factor,
            lr_patience: cfg.lr_patience_epochs,
            stop_patience: cfg.early_stop_patience_epochs,
            min_delta: cfg.early_stop_min_delta,
            best_lr: f64::INFINITY,
            since_lr: 0,
            best_stop: f64::INFINITY,
            since_stop: 0,
        }
    }

    /// Feeds one epoch's validation loss.
    pub fn observe(&mut self, val: f64) -> PlateauDecision {
        let mut d = PlateauDecision::default();
        if val < self.best_lr {
            self.best_lr = val;
            self.since_lr = 0;
        } else {
            self.since_lr += 1;
            if self.since_lr >= self.lr_patience {
                self.lr *= self.factor;
                self.since_lr = 0;
                d.lr_decayed = true;
            }
        }
        if val < self.best_stop - self.min_delta {
            self.best_stop = val;
            self.since_stop = 0;
        } else {
            self.since_stop += 1;
            d.stop = self.since_stop >= self.stop_patience;
        }
        d
    }
}

#[derive(Default)]
struct Accum {
    total: f64,
    recon: f64,
    kl: f64,
    n: f64,
}

impl Accum {
    fn add(&mut self, p: &LossParts, weight: usize) {
        let w = weight as f64;
        self.total += p.total * w;
        self.recon += p.recon * w;
        self.kl += p.kl * w;
        self.n += w;
    }

    fn mean(&self) -> LossParts {
        let n = self.n.max(1.0);
        LossParts {
            total: self.total / n,
            recon: self.recon / n,
            kl: self.kl / n,
        }
    }
}

/// Validation loss with a fixed noise stream so epochs are comparable.
pub fn validation_loss<T: Real>(model: &VaeModel<T>, val: &PatchSet, beta: f64, batch_size: usize, seed: u64) -> Result<LossParts> {
    let mut rng = rng_from_seed(derive_seed(seed, "validation"));
    let mut acc = Accum::default();
    for chunk in val.patches.chunks(batch_size.max(1)) {
        let views: Vec<_> = chunk.iter().map(|p| p.view()).collect();
        let eval = model.evaluate(&views, beta, &mut rng, EvalOptions::default())?;
        acc.add(&eval.parts, chunk.len());
    }
    Ok(acc.mean())
}

/// Trains `model` and returns the parameters with the lowest validation loss.
pub fn train<T: Real>(model: VaeModel<T>, train: &PatchSet, val: &PatchSet, cfg: &TrainConfig) -> Result<(VaeModel<T>, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training patch set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Input("validation patch set is empty".into()));
    }
    let p = train.patch_size;
    model.arch().latent_shape(p, p)?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let start = Instant::now();
    let mut model = model;
    let mut adam = Adam::new(AdamConfig::default(), &model.block_sizes());
    let mut tracker = PlateauTracker::new(cfg);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut report = TrainReport {
        records: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::Budget,
        samples_seen: 0,
        steps: 0,
        divergence: None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Image> = Vec::with_capacity(cfg.batch_size);

    let mut epoch = 0;
    'epochs: loop {
        epoch += 1;
        let beta = effective_beta(epoch, cfg);
        let lr = tracker.lr;
        let mut rng = rng_from_seed(derive_indexed(cfg.seed, "epoch", epoch as u64));
        order.shuffle(&mut rng);
        let mut acc = Accum::default();
        let mut budget_hit = false;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            for &i in idx {
                let patch = &train.patches[i];
                batch.push(if cfg.augment {
                    dihedral(patch, rng.random_range(0..D4_COUNT))
                } else {
                    patch.clone()
                });
            }
            let views: Vec<_> = batch.iter().map(|b| b.view()).collect();
            let opts = EvalOptions {
                gradients: true,
                keep_signals: false,
            };
            let eval = match model.evaluate(&views, beta, &mut rng, opts) {
                Ok(e) => e,
                Err(Error::Divergence { detail, .. }) => {
                    report.divergence = Some(format!("epoch {epoch}, step {}: {detail}", report.steps + 1));
                    report.stop_reason = StopReason::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let mut grads = eval.grads.expect("gradients requested");
            let norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
            if !norm.is_finite() {
                report.divergence = Some(format!("epoch {epoch}, step {}: non-finite gradient norm", report.steps + 1));
                report.stop_reason = StopReason::Diverged;
                break 'epochs;
            }
            adam.step(&mut model.param_blocks_mut(), &grads, lr);
            acc.add(&eval.parts, idx.len());
            report.steps += 1;
            report.samples_seen += idx.len() as u64;
            if report.samples_seen >= cfg.max_steps {
                budget_hit = true;
                break;
            }
        }
        let train_loss = acc.mean();
        let val_loss = match validation_loss(&model, val, beta, cfg.batch_size, cfg.seed) {
            Ok(v) => v,
            Err(Error::Divergence { detail, .. }) => {
                report.divergence = Some(format!("epoch {epoch}, validation: {detail}"));
                report.stop_reason = StopReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let seconds = start.elapsed().as_secs_f64();
        report.records.push(EpochRecord {
            epoch,
            train_total: train_loss.total,
            train_recon: train_loss.recon,
            train_kl: train_loss.kl,
            val_total: val_loss.total,
            val_recon: val_loss.recon,
            val_kl: val_loss.kl,
            lr,
            beta,
            seconds,
        });
        log::info!(
            "epoch {epoch}: train {:.5} (recon {:.5}, kl {:.5}) val {:.5} lr {lr:.2e} beta {beta:.3} [{seconds:.1}s]",
            train_loss.total,
            train_loss.recon,
            train_loss.kl,
            val_loss.total
        );
        // Losses under a partial KL weight are not comparable with later
        // ones, so ranking and plateau tracking start once the ramp is over.
        let ramp_done = epoch >= cfg.kl_anneal_epochs;
        if !ramp_done || val_loss.total < best_val {
            if ramp_done {
                best_val = val_loss.total;
            }
            best = model.clone();
            report.best_epoch = epoch;
            if let Some(dir) = &cfg.output_dir {
                save_checkpoint(&dir.join("best.dnck"), &best)?;
            }
        }
        let decision = if ramp_done {
            tracker.observe(val_loss.total)
        } else {
            PlateauDecision::default()
        };
        if decision.lr_decayed {
            log::info!("validation plateau: learning rate decayed to {:.2e}", tracker.lr);
        }
        if budget_hit {
            report.stop_reason = StopReason::Budget;
            break;
        }
        if decision.stop {
            report.stop_reason = StopReason::Plateau;
            break;
        }
        if cfg.max_epochs.is_some_and(|m| epoch >= m) {
            report.stop_reason = StopReason::MaxEpochs;
            break;
        }
        if cfg.time_limit_secs.is_some_and(|t| seconds >= t) {
            report.stop_reason = StopReason::TimeLimit;
            break;
        }
    }
    if report.stop_reason == StopReason::Diverged {
        log::warn!(
            "training diverged ({}); returning best model from epoch {}",
            report.divergence.as_deref().unwrap_or("unknown"),
            report.best_epoch
        );
    }
    if let Some(dir) = &cfg.output_dir {
        if report.stop_reason != StopReason::Diverged {
            save_checkpoint(&dir.join("last.dnck"), &model)?;
        }
        report.write_csv(&dir.join("train_report.csv"))?;
        report.write_json(&dir.join("train_report.json"))?;
    }
    Ok((best, report))
}
