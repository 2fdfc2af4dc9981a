//! Training loop: plateau-scheduled learning rate, early stopping, and
//! best-snapshot restoration.
//!
//! Data arrives through a [`BatchSource`], which hides whether batches come
//! from reshuffled passes over a finite set or from an endless generator.
//! One "epoch" is `batches_per_round` batches followed by a validation pass.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, mean_squared_error, mlp_backward, AdamState, MlpModel};
use crate::error::{Error, Result};

/// Knobs for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_initial: f64,
    pub lr_reduce_factor: f64,
    /// Stagnant validation rounds before the learning rate is reduced.
    pub lr_patience: usize,
    /// Stagnant validation rounds before training stops.
    pub stop_patience: usize,
    /// Floor under the schedule: no reduction is taken below this rate.
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 2000,
            lr_initial: 1e-3,
            lr_reduce_factor: 0.5,
            lr_patience: 10,
            stop_patience: 25,
            min_lr: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Configuration-level sanity checks. `train` itself only needs the
    /// fields to be individually usable; the cross-field patience ordering is
    /// enforced here so callers validate before launching real runs.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config("lr_initial must be positive".into()));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return Err(Error::Config(
                "lr_reduce_factor must lie strictly between 0 and 1".into(),
            ));
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return Err(Error::Config("patience values must be positive".into()));
        }
        if self.stop_patience <= self.lr_patience {
            return Err(Error::Config(format!(
                "stop_patience ({}) must exceed lr_patience ({}) so a rate \
                 reduction gets a chance before termination",
                self.stop_patience, self.lr_patience
            )));
        }
        if !(self.min_lr > 0.0) {
            return Err(Error::Config("min_lr must be positive".into()));
        }
        Ok(())
    }
}

/// What happened during a run, one entry per completed epoch.
#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect during each epoch's updates.
    pub lr_trace: Vec<f64>,
    /// Number of completed epochs when training halted.
    pub stopped_epoch: usize,
    /// Epoch index of the restored parameter snapshot.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Source of training batches. Implementations decide what one round means.
pub trait BatchSource {
    /// Batches drawn per validation round (one "epoch").
    fn batches_per_round(&self) -> usize;
    /// Next batch of (inputs, targets); row counts match.
    fn next_batch(&mut self) -> (Array2<f64>, Array2<f64>);
}

/// Finite dataset replayed in reshuffled passes; a round is one full pass.
pub struct ShuffledBatches {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ShuffledBatches {
    pub fn new(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Argument("training set is empty".into()));
        }
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..inputs.nrows()).collect();
        order.shuffle(&mut rng);
        Ok(ShuffledBatches {
            inputs,
            targets,
            batch_size,
            order,
            cursor: 0,
            rng,
        })
    }
}

impl BatchSource for ShuffledBatches {
    fn batches_per_round(&self) -> usize {
        self.inputs.nrows().div_ceil(self.batch_size)
    }

    fn next_batch(&mut self) -> (Array2<f64>, Array2<f64>) {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let ids = &self.order[self.cursor..end];
        self.cursor = end;
        let x = self.inputs.select(Axis(0), ids);
        let t = self.targets.select(Axis(0), ids);
        (x, t)
    }
}

/// Trains until validation loss stagnates for `stop_patience` rounds, halving
/// the learning rate after every `lr_patience` stagnant rounds (never below
/// `min_lr`). Returns the best-validation snapshot, not the final parameters.
pub fn train(
    model: MlpModel,
    data: &mut dyn BatchSource,
    val_inputs: ArrayView2<'_, f64>,
    val_targets: ArrayView2<'_, f64>,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    if val_inputs.nrows() == 0 {
        return Err(Error::Argument("validation set is empty".into()));
    }
    let mut model = model;
    let mut state = AdamState::new(&model, config.lr_initial);
    let batches = data.batches_per_round().max(1);

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        lr_trace: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best_snapshot = model.clone();
    let mut stagnant_for_stop = 0usize;
    let mut stagnant_for_lr = 0usize;

    for epoch in 0..config.max_epochs {
        history.lr_trace.push(state.learning_rate);
        let mut epoch_loss = 0.0;
        for _ in 0..batches {
            let (x, t) = data.next_batch();
            let (grads, loss) = mlp_backward(&model, x.view(), t.view())?;
            if !loss.is_finite() {
                return Err(diverged(epoch, &history));
            }
            epoch_loss += loss;
            adam_step(&mut model, &mut state, &grads).map_err(|e| match e {
                Error::Numeric { message, .. } => diverged_with(epoch, &history, message),
                other => other,
            })?;
        }
        history.train_loss.push(epoch_loss / batches as f64);

        let val = mean_squared_error(&model, val_inputs, val_targets)?;
        if !val.is_finite() {
            return Err(diverged(epoch, &history));
        }
        history.val_loss.push(val);
        history.stopped_epoch = epoch + 1;

        if val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best_snapshot = model.clone();
            stagnant_for_stop = 0;
            stagnant_for_lr = 0;
        } else {
            stagnant_for_stop += 1;
            stagnant_for_lr += 1;
        }
        if stagnant_for_stop >= config.stop_patience {
            break;
        }
        if stagnant_for_lr >= config.lr_patience {
            let reduced = state.learning_rate * config.lr_reduce_factor;
            // Reductions that would undershoot the floor are skipped, keeping
            // every taken step an exact factor.
            if reduced >= config.min_lr {
                state.learning_rate = reduced;
            }
            stagnant_for_lr = 0;
        }
    }

    Ok((best_snapshot, history))
}

fn diverged(epoch: usize, history: &TrainHistory) -> Error {
    diverged_with(epoch, history, "loss became non-finite".into())
}

fn diverged_with(epoch: usize, history: &TrainHistory, message: String) -> Error {
    let last_finite = if history.val_loss.is_empty() {
        None
    } else {
        Some(history.val_loss.len() - 1)
    };
    Error::Numeric {
        message: format!("training diverged at epoch {epoch}: {message}"),
        last_finite_epoch: last_finite,
    }
}
