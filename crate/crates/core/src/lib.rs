//! Self-supervised seismic random-noise attenuation.
//!
//! A residual convolutional denoiser is trained on pairs of independently
//! corrupted images (Noise2Noise) and applied to seismic sections through an
//! amplitude-band clip & denoise composition. An f-x deconvolution baseline
//! and a metric suite (MSE, SNR, correlation, phase-spectrum correlation)
//! are included for comparison.

pub mod error;
pub mod grid;
pub mod metrics;
pub mod synth;
pub mod clip;
pub mod fx;
pub mod nn;
pub mod io;

pub use error::{Error, Result};
pub use grid::{AxisUnit, BinaryMask, SeismicSection};
