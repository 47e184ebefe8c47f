use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::metrics::{mae, mse, mse_loss};
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::{Tape, Tensor};

// Independent generator streams derived from the run seed.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SUBSAMPLE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-MAE improvement before stopping.
    pub patience: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Share of the training split used, subsampled with the run seed.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 200,
            patience: 16,
            adam: AdamConfig::default(),
            seed: 0,
            train_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        self.adam.validate()
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Seeded subsample of `round(fraction * n)` training rows. A fraction of
/// 1 returns the split untouched.
pub fn subsample(train: &EncodedDataset, fraction: f64, seed: u64) -> Result<EncodedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(train.clone());
    }
    let k = (fraction * train.len() as f64).round() as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {} rows leaves no training data",
            train.len()
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut rng(seed, STREAM_SUBSAMPLE));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(train.select(&idx))
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation MAE.
    pub model: Model,
    /// 1-based epoch the returned parameters come from.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub epochs_run: usize,
    pub val_mae: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub n_train: usize,
    pub wall_seconds: f64,
}

/// Tracks the best validation score and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `score` for `epoch`; returns true when it is a new best.
    pub fn update(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Mini-batch MSE training with validation-MAE early stopping. Only the
/// training and validation splits are visible here.
pub fn fit(model_cfg: &ModelConfig, train: &EncodedDataset, val: &EncodedDataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    let train = subsample(train, cfg.train_fraction, cfg.seed)?;
    if val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut model = Model::build(model_cfg, &train.schema, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam.clone(), &model.params)?;
    let mut shuffle = rng(cfg.seed, STREAM_SHUFFLE);
    let mut dropout = rng(cfg.seed, STREAM_DROPOUT);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut tape = Tape::new();
    let (mut val_hist, mut loss_hist) = (Vec::new(), Vec::new());
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch = train.select(chunk);
            tape.clear();
            let bound = model.params.bind(&mut tape, true);
            let pred = model.forward(&mut tape, &bound, &batch, Some(&mut dropout))?;
            let loss = mse_loss(&mut tape, pred, &batch.target)?;
            let value = tape.value(loss)?.item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            loss_sum += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .map(|(_, v)| Ok(tape.grad(v)?.cloned().expect("trainable leaves get gradients")))
                .collect::<Result<_>>()?;
            adam.step(&mut model.params, &grads)?;
        }
        loss_hist.push(loss_sum / train.len() as f64);
        let pred = model.predict(val).map_err(|e| match e {
            Error::Numeric(_) => Error::Diverged {
                epoch,
                step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        let score = mae(&pred, &val.target)?;
        val_hist.push(score);
        if stopper.update(epoch, score) {
            best_params = model.params.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    let (best_epoch, best_val_mae) = stopper.best();
    model.params = best_params;
    Ok(FitResult {
        model,
        best_epoch,
        best_val_mae,
        epochs_run: val_hist.len(),
        val_mae: val_hist,
        train_loss: loss_hist,
        n_train: train.len(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Test MAE and MSE of `model`.
pub fn evaluate(model: &Model, test: &EncodedDataset) -> Result<(f64, f64)> {
    let pred = model.predict(test)?;
    Ok((mae(&pred, &test.target)?, mse(&pred, &test.target)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(1);
        assert!(s.update(1, 1.0));
        assert!(!s.should_stop());
        assert!(!s.update(2, 2.0));
        assert!(s.should_stop());
        assert_eq!(s.best(), (1, 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            train_fraction: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
