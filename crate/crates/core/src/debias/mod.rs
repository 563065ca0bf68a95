//! Label-supervised training: ERM, group DRO, and the JTT-style
//! identify-then-upweight pipeline.

mod dro;
mod upweight;

use serde::{Deserialize, Serialize};

pub use dro::{train_group_balanced_erm, train_group_dro, DroOutcome, DroState};
pub use upweight::{
    build_upweighted, build_upweighted_with, identification_model, identify_errors, train_jtt, ErrorSet,
    JttOutcome, UpweightConvention,
};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{ce_loss_grad, Gradients, Mlp, MlpArch, SgdState, Upstream};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Epochs between recorded checkpoints; the final epoch is always kept.
    /// Zero records only the final model.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
            eval_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        Ok(())
    }

    /// The short schedule used for identification models: one fifth of the
    /// epochs (at least one), final checkpoint only.
    pub fn identification(&self) -> TrainConfig {
        TrainConfig {
            epochs: (self.epochs / 5).max(1),
            eval_every: 0,
            ..self.clone()
        }
    }
}

/// A model snapshot taken at the end of `epoch` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub model: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub history: Vec<Checkpoint>,
}

/// Deterministic visiting order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Shuffle, epoch as u64));
    order
}

/// Mini-batch SGD driver shared by every trainer. `batch_step` returns the
/// batch loss and gradients for the given sample indices.
pub(crate) fn fit<F>(model: &mut Mlp, n: usize, cfg: &TrainConfig, mut batch_step: F) -> Result<Vec<Checkpoint>>
where
    F: FnMut(&Mlp, &[usize]) -> Result<(f64, Gradients)>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let mut sgd = SgdState::new(model, cfg.learning_rate, cfg.weight_decay, cfg.momentum)?;
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        for batch in epoch_order(cfg.seed, epoch, n).chunks(cfg.batch_size) {
            let (loss, grads) = batch_step(model, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            sgd.step(model, &grads)?;
        }
        let done = epoch + 1;
        if done == cfg.epochs || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            history.push(Checkpoint {
                epoch: done,
                model: model.clone(),
            });
        }
    }
    Ok(history)
}

/// One weighted cross-entropy step on a batch.
pub(crate) fn ce_batch(model: &Mlp, data: &Dataset, labels: &[usize], batch: &[usize]) -> Result<(f64, Gradients)> {
    let xb = data.x().select_rows(batch);
    let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
    let wb: Vec<f64> = batch.iter().map(|&i| data.weights()[i]).collect();
    let trace = model.forward_trace(&xb)?;
    let lg = ce_loss_grad(trace.logits(), &yb, &wb)?;
    let grads = model.backward(&trace, &Upstream::Logits(lg.grad))?;
    Ok((lg.loss, grads))
}

/// Continues training an existing model with weighted cross-entropy.
pub fn train_erm_from(mut model: Mlp, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let labels = dataset.labels("train_erm")?;
    if model.d_in() != dataset.d() {
        return Err(Error::shape("train_erm input dimension", model.d_in(), dataset.d()));
    }
    let history = fit(&mut model, dataset.len(), cfg, |m, batch| ce_batch(m, dataset, labels, batch))?;
    Ok(TrainOutcome { model, history })
}

/// Empirical risk minimization: weighted mean cross-entropy, mini-batch SGD,
/// initialization and shuffling derived from `cfg.seed`.
pub fn train_erm(arch: &MlpArch, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_erm_from(arch.init(cfg.seed)?, dataset, cfg)
}
