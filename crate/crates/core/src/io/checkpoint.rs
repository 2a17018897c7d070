//! Model checkpoint container.
//!
//! Layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `N2NCKPT\0` |
//! | 4 | format version, u32 LE |
//! | 8 | header length `h`, u64 LE |
//! | h | JSON header |
//! | rest | f32 LE tensor data, concatenated in header order |
//!
//! The header holds the model config, the training progress and log, the
//! CRC-32 of the tensor data, and one `{name, role, shape}` entry per
//! tensor. Roles are `param`, `buffer`, `adam_m`, `adam_v`, `best_param` and
//! `best_buffer`. Per-epoch wall times are not stored so that identical runs
//! give identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    AdamState, DenoiserConfig, DenoiserModel, EpochRecord, Tensor, Termination, TrainProgress,
    TrainingLog,
};

pub const MAGIC: &[u8; 8] = b"N2NCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    Buffer,
    AdamM,
    AdamV,
    BestParam,
    BestBuffer,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredRecord {
    epoch: usize,
    train_loss: f64,
    val_mse: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: DenoiserConfig,
    adam_steps: u64,
    epochs_completed: usize,
    /// Absent before the first validation.
    best_val_mse: Option<f64>,
    stale_epochs: usize,
    records: Vec<StoredRecord>,
    termination: Option<Termination>,
    checksum: u32,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub progress: TrainProgress,
    pub log: TrainingLog,
}

impl Checkpoint {
    /// A checkpoint of an untrained or externally built model.
    pub fn from_model(model: DenoiserModel) -> Self {
        let progress = TrainProgress::fresh(&model);
        Self {
            model,
            progress,
            log: TrainingLog::default(),
        }
    }

    /// The model with the best validation weights.
    pub fn best_model(&self) -> DenoiserModel {
        let mut best = self.model.clone();
        best.params = self.progress.best_params.clone();
        best.buffers = self.progress.best_buffers.clone();
        best
    }
}

fn moment_tensors(params: &[Tensor<f32>], moments: &[Vec<f32>]) -> Vec<Tensor<f32>> {
    params
        .iter()
        .zip(moments)
        .map(|(p, m)| Tensor {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: m.clone(),
        })
        .collect()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let groups: [(Role, Vec<Tensor<f32>>); 6] = [
        (Role::Param, model.params.clone()),
        (Role::Buffer, model.buffers.clone()),
        (Role::AdamM, moment_tensors(&model.params, &model.adam.first_moment)),
        (Role::AdamV, moment_tensors(&model.params, &model.adam.second_moment)),
        (Role::BestParam, ckpt.progress.best_params.clone()),
        (Role::BestBuffer, ckpt.progress.best_buffers.clone()),
    ];
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (role, group) in &groups {
        for t in group {
            tensors.push(TensorEntry {
                name: t.name.clone(),
                role: *role,
                shape: t.shape.clone(),
            });
            for v in &t.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let p = &ckpt.progress;
    let header = Header {
        config: model.config.clone(),
        adam_steps: model.adam.step_count,
        epochs_completed: p.epochs_completed,
        best_val_mse: p.best_val_mse.is_finite().then_some(p.best_val_mse),
        stale_epochs: p.stale_epochs,
        records: ckpt
            .log
            .records
            .iter()
            .map(|r| StoredRecord {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_mse: r.val_mse,
            })
            .collect(),
        termination: ckpt.log.termination,
        checksum: crc32fast::hash(&data),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let data = &bytes[header_end..];
    let actual = crc32fast::hash(data);
    if actual != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            actual,
        });
    }

    let mut groups: Vec<(Role, Vec<Tensor<f32>>)> = Vec::new();
    let mut offset = 0;
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let end = offset + 4 * len;
        if end > data.len() {
            return Err(Error::Format("tensor data shorter than header".into()));
        }
        let values = data[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        let tensor = Tensor {
            name: entry.name,
            shape: entry.shape,
            data: values,
        };
        match groups.last_mut() {
            Some((role, group)) if *role == entry.role => group.push(tensor),
            _ => groups.push((entry.role, vec![tensor])),
        }
    }
    if offset != data.len() {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    let mut take = |want: Role| -> Result<Vec<Tensor<f32>>> {
        match groups.iter().position(|(r, _)| *r == want) {
            Some(i) => Ok(groups.remove(i).1),
            None => Ok(Vec::new()),
        }
    };
    let params = take(Role::Param)?;
    let buffers = take(Role::Buffer)?;
    let adam = AdamState {
        first_moment: take(Role::AdamM)?.into_iter().map(|t| t.data).collect(),
        second_moment: take(Role::AdamV)?.into_iter().map(|t| t.data).collect(),
        step_count: header.adam_steps,
    };
    let best_params = take(Role::BestParam)?;
    let best_buffers = take(Role::BestBuffer)?;
    if !groups.is_empty() {
        return Err(Error::Format("tensor roles out of order".into()));
    }

    let model = DenoiserModel {
        config: header.config,
        params,
        buffers,
        adam,
    };
    model.config.validate()?;
    model.check_consistency()?;
    let best = DenoiserModel {
        params: best_params.clone(),
        buffers: best_buffers.clone(),
        ..model.clone()
    };
    best.check_consistency()?;

    let progress = TrainProgress {
        epochs_completed: header.epochs_completed,
        best_val_mse: header.best_val_mse.unwrap_or(f64::INFINITY),
        stale_epochs: header.stale_epochs,
        best_params,
        best_buffers,
    };
    let log = TrainingLog {
        records: header
            .records
            .into_iter()
            .map(|r| EpochRecord {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_mse: r.val_mse,
                wall_time_s: None,
            })
            .collect(),
        termination: header.termination,
    };
    Ok(Checkpoint {
        model,
        progress,
        log,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
