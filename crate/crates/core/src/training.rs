//! Pieces shared by the DQR and BRNN training loops.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    /// A non-finite loss appeared; the returned parameters are the last finite best.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub skipped_steps: u64,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for r in &self.epochs {
            w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Trailing moving average of the training loss.
    pub fn smoothed_train_loss(&self, window: usize) -> Vec<f64> {
        let xs: Vec<f64> = self.epochs.iter().map(|r| r.train_loss).collect();
        xs.windows(window.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
    }
}

/// Patience-based early stopping that remembers the best parameters.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    best_params: Option<ParamStore>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            best_params: None,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, params: &ParamStore) -> bool {
        if val_loss.is_finite() && (val_loss < self.best || self.best_epoch.is_none()) {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.best_params = Some(params.clone());
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        self.since_best > self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn take_best(&mut self) -> Option<ParamStore> {
        self.best_params.take()
    }
}

/// Shuffled index batches of at most `batch_size`.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Evaluation chunks in natural order.
pub fn ordered_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
