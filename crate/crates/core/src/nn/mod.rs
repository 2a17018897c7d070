//! Residual convolutional denoiser with Noise2Noise training.
//!
//! Architecture: a 3×3 head convolution lifting the single input channel to
//! `feature_dim` channels, a stack of residual units
//! (conv → BN → PReLU → conv → BN plus identity shortcut), a 3×3 tail
//! convolution back to one channel, and an optional global input skip.

mod adam;
pub mod layers;
mod model;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use model::{
    batch_from_patches, loss, loss_gradient, patches_from_batch, DenoiserNet, ForwardCache, Mode,
    Tensor,
};
pub use train::{
    denoise_image, identity_mse, validation_mse, EpochRecord, Termination, TrainProgress, Trainer, TrainingLog,
};

/// Floating-point element type of a network.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + Debug
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// The stored model: 32-bit weights.
pub type DenoiserModel = DenoiserNet<f32>;

/// Architecture and training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub feature_dim: usize,
    pub n_residual_units: usize,
    /// Adam step size. Values of 1e-3 to 1e-4 are steadier if 0.01 diverges.
    pub learning_rate: f64,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub early_stop_patience_epochs: usize,
    pub max_epochs: usize,
    /// Add the network input to its output.
    pub global_skip: bool,
    /// Per-patch training noise sigma is drawn uniformly from this range.
    pub sigma_range: (f64, f64),
    pub validation_pairs: usize,
    /// Inference tile edge; larger inputs are processed in overlapping tiles.
    pub tile_size: usize,
    pub tile_overlap: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            n_residual_units: 16,
            learning_rate: 0.01,
            steps_per_epoch: 1000,
            batch_size: 16,
            patch_size: 64,
            early_stop_patience_epochs: 5,
            max_epochs: 100,
            global_skip: true,
            sigma_range: (0.02, 0.12),
            validation_pairs: 64,
            tile_size: 256,
            tile_overlap: 32,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("n_residual_units", self.n_residual_units),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("validation_pairs", self.validation_pairs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.patch_size < 8 {
            return Err(Error::Config(format!(
                "patch_size must be at least 8, got {}",
                self.patch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid sigma_range ({lo}, {hi})")));
        }
        if self.tile_size < 8 || self.tile_overlap >= self.tile_size {
            return Err(Error::Config(format!(
                "tile_size {} must be at least 8 and exceed tile_overlap {}",
                self.tile_size, self.tile_overlap
            )));
        }
        Ok(())
    }
}
