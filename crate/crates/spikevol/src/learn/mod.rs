//! Desk-scale trainable models for spike volume estimation, with hand-rolled
//! forward/backward passes: the histogram-encoder teacher/student pair, the
//! regulated multi-view regressor, the latent-fusion ensemble, and the two
//! distillation procedures (feature alignment and pseudo-labels).

pub mod dataset;
pub mod encoder;
pub mod ensemble;
pub mod gradcheck;
pub mod mlp;
pub mod regulated;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Cloud(#[from] crate::cloud::CloudError),
}

/// Optimization settings shared by every trainer (Adam with beta1 = 0.9,
/// beta2 = 0.999).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Encoder defaults: batch 8, 60 epochs, learning rate 2e-3.
    pub fn encoder_default(seed: u64) -> Self {
        Self { learning_rate: 2e-3, batch_size: 8, epochs: 60, seed }
    }

    /// Multi-view regressor defaults: batch 32, 500 epochs, learning rate 1e-3.
    pub fn regressor_default(seed: u64) -> Self {
        Self { learning_rate: 1e-3, batch_size: 32, epochs: 500, seed }
    }

    /// Fusion-head defaults: batch 16, 30 epochs, learning rate 1e-3.
    pub fn ensemble_default(seed: u64) -> Self {
        Self { learning_rate: 1e-3, batch_size: 16, epochs: 30, seed }
    }

    /// Normal-operation validation used at configuration boundaries.
    /// Trainers themselves also accept `epochs = 0` (returning the
    /// initialized model unchanged), which is useful for extracting
    /// untrained baselines.
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(LearnError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Z-scoring of regression targets, fit on the training split. Models
/// predict in scaled space; reports and checkpoints carry the statistics so
/// predictions can be mapped back to mm^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self, LearnError> {
        if values.is_empty() {
            return Err(LearnError::EmptyInput("target scaler needs at least one value"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std == 0.0 {
            return Err(LearnError::InvalidConfig(
                "targets have zero variance; scaling is undefined".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_round_trips_and_validates() {
        let scaler = TargetScaler::fit(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(scaler.mean, 4.0);
        for v in [1.5, 4.0, 9.25] {
            assert!((scaler.unscale(scaler.scale(v)) - v).abs() < 1e-12);
        }
        assert!(TargetScaler::fit(&[]).is_err());
        assert!(TargetScaler::fit(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn config_validation_covers_the_invariants() {
        assert!(TrainConfig::encoder_default(0).validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::encoder_default(0) }
            .validate()
            .is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::encoder_default(0) }
            .validate()
            .is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::encoder_default(0) }
            .validate()
            .is_err());
    }
}
