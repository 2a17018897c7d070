use std::time::Instant;

use ndarray::{s, Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::model::{batch_from_patches, patches_from_batch, DenoiserNet, Mode, Tensor};
use super::{DenoiserModel, Scalar};
use crate::clip::Denoiser;
use crate::error::{Error, Result};
use crate::synth::{sample_clean_pairs, sample_noise_pairs, NoisePairBatch};

/// Why a training run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Validation error stopped improving for the configured patience.
    Converged,
    MaxEpochs,
    /// The caller's epoch budget ran out first.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    /// Not persisted in checkpoints, so epochs restored from one have none.
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub termination: Option<Termination>,
}

/// Early-stopping bookkeeping, including the best weights seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub epochs_completed: usize,
    pub best_val_mse: f64,
    pub stale_epochs: usize,
    pub best_params: Vec<Tensor<f32>>,
    pub best_buffers: Vec<Tensor<f32>>,
}

impl TrainProgress {
    pub fn fresh(model: &DenoiserModel) -> Self {
        Self {
            epochs_completed: 0,
            best_val_mse: f64::INFINITY,
            stale_epochs: 0,
            best_params: model.params.clone(),
            best_buffers: model.buffers.clone(),
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the batch drawn at `(epoch, step)`, independent of how the run
/// was split across resumes.
pub(crate) fn batch_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ step as u64)
}

fn validation_seed(seed: u64) -> u64 {
    mix(seed ^ 0x5641_4c49_4441_5445)
}

/// Per-pixel MSE between the noisy inputs and the clean targets of a
/// validation set: the error of doing nothing.
pub fn identity_mse(batch: &NoisePairBatch) -> f64 {
    mean_pixel_mse(&batch.inputs, &batch.targets)
}

fn mean_pixel_mse(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    let (sum, count) = a.iter().zip(b).fold((0.0, 0usize), |(s, c), (x, y)| {
        (s + (x - y).mapv(|d| d * d).sum(), c + x.len())
    });
    sum / count.max(1) as f64
}

/// Per-pixel MSE of the network's output on a validation set.
pub fn validation_mse<T: Scalar>(net: &DenoiserNet<T>, batch: &NoisePairBatch) -> Result<f64> {
    let chunk = net.config.batch_size.max(1);
    let mut outputs = Vec::with_capacity(batch.len());
    for inputs in batch.inputs.chunks(chunk) {
        let x: Array4<T> = batch_from_patches(inputs)?;
        outputs.extend(patches_from_batch(&net.forward(&x, Mode::Infer)?));
    }
    Ok(mean_pixel_mse(&outputs, &batch.targets))
}

/// Noise2Noise training loop over a corpus of clean 2D images.
pub struct Trainer<'a> {
    pub model: DenoiserModel,
    pub progress: TrainProgress,
    pub log: TrainingLog,
    corpus: &'a [Array2<f64>],
    validation: NoisePairBatch,
}

impl<'a> Trainer<'a> {
    pub fn new(model: DenoiserModel, corpus: &'a [Array2<f64>]) -> Result<Self> {
        let progress = TrainProgress::fresh(&model);
        Self::resume(model, progress, TrainingLog::default(), corpus)
    }

    /// Continues from a saved model and progress. With the same corpus the
    /// result matches an uninterrupted run.
    pub fn resume(
        model: DenoiserModel,
        progress: TrainProgress,
        log: TrainingLog,
        corpus: &'a [Array2<f64>],
    ) -> Result<Self> {
        model.config.validate()?;
        model.check_consistency()?;
        let c = &model.config;
        let validation = sample_clean_pairs(
            corpus,
            c.patch_size,
            c.validation_pairs,
            c.sigma_range,
            validation_seed(c.seed),
        )?;
        Ok(Self {
            model,
            progress,
            log,
            corpus,
            validation,
        })
    }

    pub fn validation_set(&self) -> &NoisePairBatch {
        &self.validation
    }

    pub fn is_finished(&self) -> bool {
        let (c, p) = (&self.model.config, &self.progress);
        p.epochs_completed >= c.max_epochs
            || (p.epochs_completed > 0 && p.stale_epochs >= c.early_stop_patience_epochs)
    }

    /// Runs one epoch of `steps_per_epoch` optimizer steps followed by a
    /// validation pass.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let c = self.model.config.clone();
        let epoch = self.progress.epochs_completed;
        let mut loss_sum = 0.0;
        for step in 0..c.steps_per_epoch {
            let pairs = sample_noise_pairs(
                self.corpus,
                c.patch_size,
                c.batch_size,
                c.sigma_range,
                batch_seed(c.seed, epoch, step),
            )?;
            let x = batch_from_patches(&pairs.inputs)?;
            let y = batch_from_patches(&pairs.targets)?;
            loss_sum += self.model.backward_and_step(&x, &y).map_err(|e| match e {
                Error::Divergence(msg) => {
                    Error::Divergence(format!("epoch {epoch} step {step}: {msg}"))
                }
                other => other,
            })?;
        }
        let val_mse = validation_mse(&self.model, &self.validation)?;
        if !val_mse.is_finite() {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: validation error is {val_mse}"
            )));
        }
        let p = &mut self.progress;
        if val_mse < p.best_val_mse {
            p.best_val_mse = val_mse;
            p.stale_epochs = 0;
            p.best_params = self.model.params.clone();
            p.best_buffers = self.model.buffers.clone();
        } else {
            p.stale_epochs += 1;
        }
        p.epochs_completed += 1;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / c.steps_per_epoch as f64,
            val_mse,
            wall_time_s: Some(start.elapsed().as_secs_f64()),
        };
        self.log.records.push(record.clone());
        Ok(record)
    }

    /// Trains until early stopping, `max_epochs`, or `budget` more epochs,
    /// whichever comes first. `on_epoch` sees each finished epoch.
    pub fn train(
        &mut self,
        budget: Option<usize>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Termination> {
        let mut ran = 0;
        let termination = loop {
            let c = &self.model.config;
            if self.progress.epochs_completed > 0
                && self.progress.stale_epochs >= c.early_stop_patience_epochs
            {
                break Termination::Converged;
            }
            if self.progress.epochs_completed >= c.max_epochs {
                break Termination::MaxEpochs;
            }
            if budget.is_some_and(|b| ran >= b) {
                break Termination::Manual;
            }
            let record = self.run_epoch()?;
            on_epoch(&record);
            ran += 1;
        };
        self.log.termination = Some(termination);
        Ok(termination)
    }

    /// The model carrying the best validation weights.
    pub fn best_model(&self) -> DenoiserModel {
        let mut best = self.model.clone();
        best.params = self.progress.best_params.clone();
        best.buffers = self.progress.best_buffers.clone();
        best
    }
}

fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Applies the network to a 2D image of any size. Images larger than
/// `tile_size` are cut into overlapping tiles whose outputs are averaged.
pub fn denoise_image<T: Scalar>(net: &DenoiserNet<T>, image: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (rows, cols) = image.dim();
    let c = &net.config;
    let th = rows.min(c.tile_size);
    let tw = cols.min(c.tile_size);
    let row_starts = tile_starts(rows, th, c.tile_overlap.min(th.saturating_sub(1)));
    let col_starts = tile_starts(cols, tw, c.tile_overlap.min(tw.saturating_sub(1)));
    let origins: Vec<(usize, usize)> = row_starts
        .iter()
        .flat_map(|&r| col_starts.iter().map(move |&c| (r, c)))
        .collect();

    let mut sum = Array2::<f64>::zeros((rows, cols));
    let mut weight = Array2::<f64>::zeros((rows, cols));
    for group in origins.chunks(c.batch_size.max(1)) {
        let tiles: Vec<Array2<f64>> = group
            .iter()
            .map(|&(r, c)| image.slice(s![r..r + th, c..c + tw]).to_owned())
            .collect();
        let x: Array4<T> = batch_from_patches(&tiles)?;
        let y = net.forward(&x, Mode::Infer)?;
        for (&(r, c), out) in group.iter().zip(y.axis_iter(Axis(0))) {
            let out = out.index_axis(Axis(0), 0);
            let mut region = sum.slice_mut(s![r..r + th, c..c + tw]);
            region.zip_mut_with(&out, |a, &b| *a += b.to_f64().unwrap());
            weight.slice_mut(s![r..r + th, c..c + tw]).mapv_inplace(|w| w + 1.0);
        }
    }
    Ok(sum / weight)
}

impl<T: Scalar> Denoiser for DenoiserNet<T> {
    fn denoise(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        denoise_image(self, input)
    }
}
