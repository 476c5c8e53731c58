//! Variational autoencoder over voxel grids.
//!
//! The encoder is a stack of strided 3D convolutions (each followed by ReLU and
//! batch normalization) whose inputs concatenate every earlier activation,
//! max-pooled to the current resolution. A 1x1x1 convolution produces `2J`
//! channels that are reduced by a spatial max into the means and log-variances.
//! The decoder mirrors it with transposed convolutions and nearest-neighbour
//! upsampling, ending in a sigmoid.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
pub mod ops;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, jitter_parameters, GradCheckReport, GRAD_FLOOR};
pub use loss::{
    kl_components, recon_loss, reparameterize, soft_free_bits_step, CLIP_EPS, LOGVAR_MAX,
    LOGVAR_MIN,
};
pub use network::{Model, TensorSpec};
pub use train::{train, BatchLoss, EpochStats, Optimizer, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("grid edge {got} does not match the model input edge {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub channel_widths: Vec<usize>,
    pub stack_dense: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 32,
            latent_dim: 64,
            channel_widths: vec![8, 16, 32],
            stack_dense: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: String| Err(VaeError::InvalidConfig(m));
        if !self.input_dim.is_power_of_two() || self.input_dim < 2 {
            return bad(format!("input_dim {} is not a power of two >= 2", self.input_dim));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return bad("channel_widths must be non-empty and positive".into());
        }
        if self.input_dim >> self.channel_widths.len() == 0 {
            return bad(format!(
                "{} stride-2 layers do not fit an input edge of {}",
                self.channel_widths.len(),
                self.input_dim
            ));
        }
        Ok(())
    }

    /// Edge length at the bottleneck.
    pub fn bottleneck_dim(&self) -> usize {
        self.input_dim >> self.channel_widths.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma_init: f64,
    pub lambda_bits: f64,
    /// Multiplicative step of the per-component regularizer weights.
    pub gamma_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 10.0,
            gamma_init: 0.01,
            lambda_bits: 0.1,
            gamma_rate: 0.05,
            learning_rate: 2e-3,
            epochs: 30,
            batch_size: 16,
            rng_seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: &str| Err(VaeError::InvalidTrainConfig(m.into()));
        if !(self.alpha >= 1.0) {
            return bad("alpha must be >= 1");
        }
        if !(self.gamma_init > 0.0 && self.gamma_init <= 1.0) {
            return bad("gamma_init must lie in (0, 1]");
        }
        if !(self.lambda_bits > 0.0) {
            return bad("lambda_bits must be positive");
        }
        if !(self.gamma_rate >= 0.0 && self.gamma_rate < 1.0) {
            return bad("gamma_rate must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior over the latent variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub means: Vec<f64>,
    pub log_variances: Vec<f64>,
}

impl LatentCode {
    pub fn new(means: Vec<f64>, log_variances: Vec<f64>) -> Result<Self, VaeError> {
        let code = LatentCode {
            means,
            log_variances,
        };
        code.validate()?;
        Ok(code)
    }

    /// The unit Gaussian prior with `j` components.
    pub fn prior(j: usize) -> Self {
        LatentCode {
            means: vec![0.0; j],
            log_variances: vec![0.0; j],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_variances.iter().map(|lv| lv.exp()).collect()
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        if self.means.len() != self.log_variances.len() {
            return Err(VaeError::LengthMismatch {
                expected: self.means.len(),
                got: self.log_variances.len(),
            });
        }
        if self.means.iter().chain(&self.log_variances).any(|v| !v.is_finite()) {
            return Err(VaeError::NonFinite("latent code".into()));
        }
        Ok(())
    }
}
