//! Mini-batch training with early stopping, checkpoints, and the k-fold
//! cross-validation driver.

mod checkpoint;
mod fit;
mod kfold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::GraphFeatures;

pub use checkpoint::Checkpoint;
pub use fit::{fit, fit_with, prepare, stream, train, Dataset};
pub use kfold::{kfold, partition_folds, FoldResult, KFoldConfig};

/// Which pairs the weather scaler is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalerScope {
    #[default]
    Train,
    /// Train, validation and test pairs together.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub seed: u64,
    pub pairs_per_trajectory: usize,
    pub k_hops: usize,
    pub neighbor_cap: usize,
    pub scaler_scope: ScalerScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 1e-4,
            early_stop_patience: 5,
            early_stop_min_delta: 1e-4,
            seed: 0,
            pairs_per_trajectory: 4,
            k_hops: 1,
            neighbor_cap: 64,
            scaler_scope: ScalerScope::Train,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be at least 1");
        }
        if self.batch_size == 0 || self.pairs_per_trajectory == 0 {
            return fail("batch_size and pairs_per_trajectory must be positive");
        }
        if self.k_hops == 0 || self.neighbor_cap == 0 {
            return fail("k_hops and neighbor_cap must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.early_stop_min_delta >= 0.0) {
            return fail("lr must be positive and min_delta nonnegative");
        }
        Ok(())
    }

    pub fn graph_features(&self) -> GraphFeatures {
        GraphFeatures {
            k_hops: self.k_hops,
            neighbor_cap: self.neighbor_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochsExhausted,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Seconds; kept out of checkpoints so they stay reproducible.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }
}

/// Patience-based stopping rule.
///
/// The best epoch is the true minimum of validation loss. Patience only
/// resets when the loss beats the last reset point by more than
/// `min_delta`, so a run of tiny improvements still ends.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    waited: usize,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observed {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: f64::INFINITY,
            waited: 0,
            best: None,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observed {
        let improved = match self.best {
            None => true,
            Some((_, b)) => val_loss < b,
        };
        if improved {
            self.best = Some((epoch, val_loss));
        }
        if val_loss < self.reference - self.min_delta {
            self.reference = val_loss;
            self.waited = 0;
        } else {
            self.waited += 1;
        }
        Observed {
            improved,
            stop: self.waited >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}
