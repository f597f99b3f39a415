//! Fitting the dual encoder.
//!
//! Negatives come only from the batch: for a batch of `B` linked pairs the
//! loss sees the full `B × B` similarity matrix, with soft targets for the
//! off-diagonal cells.

mod gradcheck;
mod optim;
mod state;

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    backward, forward_batch, loss_and_grad, target_matrix, DualEncoder, EncoderConfig, LossKind, Mode, PooledPairs,
};
use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};
pub use state::{load_state, save_state};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub initial_lr: f64,
    pub loss: LossKind,
    pub contrastive_margin: f64,
    pub dropout: f64,
    pub output_size: usize,
    pub passes: usize,
    pub share_pass_weights: bool,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to count as progress.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            initial_lr: 0.001,
            loss: LossKind::CosineBce,
            contrastive_margin: 1.0,
            dropout: 0.3,
            output_size: 2000,
            passes: 2,
            share_pass_weights: true,
            max_epochs: 300,
            batch_size: 128,
            patience: 10,
            min_improvement: 1e-5,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn encoder_config(&self, d_emb: usize) -> EncoderConfig {
        EncoderConfig {
            d_emb,
            output_size: self.output_size,
            passes: self.passes,
            dropout_rate: self.dropout,
            share_pass_weights: self.share_pass_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !(self.contrastive_margin > 0.0) {
            return Err(Error::config("learning rate and contrastive margin must be positive"));
        }
        if self.max_epochs == 0 || self.batch_size < 2 || self.patience == 0 {
            return Err(Error::config("max_epochs and patience must be positive, batch_size at least 2"));
        }
        Ok(())
    }
}

/// Shuffles `0..n` with a per-epoch seed and cuts it into batches. A final
/// batch of a single pair has no negatives and is dropped.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Seed of the fixed validation batching.
const VALID_EPOCH_TAG: u64 = 0x5641_4c49_4400_0000;
const DROPOUT_STREAM: u64 = 0xd50f_0000_0000_0000;

/// Mutable optimization state: parameters, Adam moments and the early-stopping
/// bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub dual: DualEncoder,
    pub adam: Adam,
    pub epoch: usize,
    pub best: DualEncoder,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub bad_epochs: usize,
}

impl TrainState {
    pub fn new(dual: DualEncoder) -> Self {
        TrainState {
            adam: Adam::new(&dual),
            best: dual.clone(),
            dual,
            epoch: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// Loss of one batch in the given mode, without gradients.
pub fn batch_loss(
    dual: &DualEncoder,
    pooled: &PooledPairs,
    batch: &[usize],
    hp: &HyperParams,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (tx, cx) = pooled.gather(batch);
    let t = forward_batch(&dual.text, &dual.config, tx.view(), mode, rng).output;
    let c = forward_batch(&dual.code, &dual.config, cx.view(), mode, rng).output;
    let s = target_matrix(t.view(), c.view());
    loss_and_grad(hp.loss, t.view(), c.view(), s.view(), hp.contrastive_margin).0
}

/// One optimizer step on `batch`; returns the batch loss before the update.
pub fn train_step(
    state: &mut TrainState,
    pooled: &PooledPairs,
    batch: &[usize],
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::config("a training batch needs at least two pairs"));
    }
    let (tx, cx) = pooled.gather(batch);
    let cfg = state.dual.config.clone();
    let t_cache = forward_batch(&state.dual.text, &cfg, tx.view(), Mode::Train, rng);
    let c_cache = forward_batch(&state.dual.code, &cfg, cx.view(), Mode::Train, rng);
    let s: Array2<f64> = target_matrix(t_cache.output.view(), c_cache.output.view());
    let (loss, dt, dc) =
        loss_and_grad(hp.loss, t_cache.output.view(), c_cache.output.view(), s.view(), hp.contrastive_margin);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at epoch {} step {} (batch of {})",
            state.epoch + 1,
            state.adam.step,
            batch.len()
        )));
    }
    let text_grad = backward(&state.dual.text, &cfg, &t_cache, dt.view());
    let code_grad = backward(&state.dual.code, &cfg, &c_cache, dc.view());
    state.adam.update(&mut state.dual, &text_grad, &code_grad, hp.initial_lr);
    Ok(loss)
}

/// Mean eval-mode loss over a fixed seeded batching of `pooled`.
pub fn validation_loss(dual: &DualEncoder, pooled: &PooledPairs, hp: &HyperParams) -> Result<f64> {
    let batches = make_batches(pooled.len(), hp.batch_size, hp.seed, VALID_EPOCH_TAG);
    if batches.is_empty() {
        return Err(Error::config("validation split needs at least two pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let total: f64 = batches.iter().map(|b| batch_loss(dual, pooled, b, hp, Mode::Eval, &mut rng)).sum();
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_improvement: f64,
    pub best: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        EarlyStopping { patience, min_improvement, best: f64::INFINITY, best_epoch: 0, bad_epochs: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.min_improvement {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::NoImprovement
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters with the lowest validation loss seen (epoch 0 is the
    /// untrained starting point).
    pub best: DualEncoder,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
    pub state: TrainState,
}

pub fn fit(train: &PooledPairs, valid: &PooledPairs, hp: &HyperParams) -> Result<FitOutcome> {
    hp.validate()?;
    let dual = DualEncoder::new(hp.encoder_config(train.d_emb()), hp.seed)?;
    fit_from(TrainState::new(dual), train, valid, hp, |_, _| Ok(()))
}

/// Runs (or resumes) training from `state`, calling `on_epoch` after every
/// completed epoch.
pub fn fit_from<F>(
    mut state: TrainState,
    train: &PooledPairs,
    valid: &PooledPairs,
    hp: &HyperParams,
    mut on_epoch: F,
) -> Result<FitOutcome>
where
    F: FnMut(&EpochLog, &TrainState) -> Result<()>,
{
    hp.validate()?;
    if train.len() < 2 {
        return Err(Error::config("training split needs at least two pairs"));
    }
    if train.d_emb() != state.dual.config.d_emb {
        return Err(Error::config(format!(
            "embedding dimension {} does not match encoder input {}",
            train.d_emb(),
            state.dual.config.d_emb
        )));
    }
    let initial_val_loss = validation_loss(&state.dual, valid, hp)?;
    let mut stopper = EarlyStopping::new(hp.patience, hp.min_improvement);
    if state.epoch == 0 {
        stopper.observe(0, initial_val_loss);
        state.best = state.dual.clone();
        state.best_val_loss = initial_val_loss;
        state.best_epoch = 0;
        state.bad_epochs = 0;
    } else {
        stopper.best = state.best_val_loss;
        stopper.best_epoch = state.best_epoch;
        stopper.bad_epochs = state.bad_epochs;
    }

    let start = Instant::now();
    let mut log = Vec::new();
    let mut stopped_early = false;
    while state.epoch < hp.max_epochs {
        if stopper.bad_epochs >= hp.patience {
            stopped_early = true;
            break;
        }
        let epoch = state.epoch as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ epoch ^ DROPOUT_STREAM);
        let batches = make_batches(train.len(), hp.batch_size, hp.seed, epoch);
        let mut train_total = 0.0;
        for batch in &batches {
            train_total += train_step(&mut state, train, batch, hp, &mut rng)?;
        }
        state.epoch += 1;
        let val_loss = validation_loss(&state.dual, valid, hp)?;
        if !val_loss.is_finite() || !state.dual.text.is_finite() || !state.dual.code.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {}", state.epoch)));
        }
        let decision = stopper.observe(state.epoch, val_loss);
        if decision == StopDecision::Improved {
            state.best = state.dual.clone();
            state.best_epoch = state.epoch;
            state.best_val_loss = val_loss;
        }
        state.bad_epochs = stopper.bad_epochs;

        let entry = EpochLog {
            epoch: state.epoch,
            train_loss: train_total / batches.len() as f64,
            val_loss,
            lr: hp.initial_lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {:>3}  train {:.6}  valid {:.6}{}",
            entry.epoch,
            entry.train_loss,
            entry.val_loss,
            if decision == StopDecision::Improved { "  *" } else { "" }
        );
        on_epoch(&entry, &state)?;
        log.push(entry);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    Ok(FitOutcome {
        best: state.best.clone(),
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        initial_val_loss,
        log,
        stopped_early,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes() {
        let sizes = |n, b| make_batches(n, b, 1, 0).iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(sizes(9, 4), vec![4, 4]);
        assert_eq!(make_batches(10, 4, 3, 2), make_batches(10, 4, 3, 2));
        assert_ne!(make_batches(50, 50, 3, 2), make_batches(50, 50, 3, 3));
    }

    #[test]
    fn batches_cover_each_index_once() {
        let mut all: Vec<usize> = make_batches(37, 5, 9, 4).concat();
        all.sort();
        assert_eq!(all, (0..37).collect::<Vec<_>>()[..all.len()].to_vec());
        assert_eq!(all.len(), 37);
    }

    #[test]
    fn early_stopping_trace() {
        let mut es = EarlyStopping::new(10, 1e-5);
        let mut stop_at = None;
        for epoch in 1..=300 {
            let loss = if epoch <= 30 { 1.0 / epoch as f64 } else { 1.0 / 30.0 };
            if es.observe(epoch, loss) == StopDecision::Stop {
                stop_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stop_at, Some(40));
        assert_eq!(es.best_epoch, 30);
    }

    #[test]
    fn jitter_below_threshold_is_not_progress() {
        let mut es = EarlyStopping::new(2, 1e-5);
        assert_eq!(es.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(2, 1.0 - 1e-6), StopDecision::NoImprovement);
        assert_eq!(es.observe(3, 1.0 - 2e-6), StopDecision::Stop);
    }

    #[test]
    fn rejects_bad_hyperparams() {
        assert!(HyperParams { batch_size: 1, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams { initial_lr: 0.0, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams::default().validate().is_ok());
    }
}
