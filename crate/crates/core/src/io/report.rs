//! CSV forms of evaluation reports and training logs.
//!
//! Evaluation header: `label,mse,snr_db,corrcoef` followed by one
//! `phase_<low>_<high>` column per frequency band, e.g. `phase_0_10`. An
//! infinite SNR is written as `inf`.
//!
//! Training-log header: `epoch,train_loss,val_mse,wall_time_s`. The wall time
//! is empty for epochs restored from a checkpoint.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::{BandCorr, EvalReport};
use crate::nn::TrainingLog;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn band_column(low: f64, high: f64) -> String {
    format!("phase_{low}_{high}")
}

fn parse_band_column(name: &str) -> Result<(f64, f64)> {
    let bad = || Error::Format(format!("unexpected column {name:?}"));
    let rest = name.strip_prefix("phase_").ok_or_else(bad)?;
    let (lo, hi) = rest.split_once('_').ok_or_else(bad)?;
    Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?))
}

pub fn eval_header(bands: &[(f64, f64)]) -> Vec<String> {
    let mut header: Vec<String> = ["label", "mse", "snr_db", "corrcoef"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(bands.iter().map(|&(lo, hi)| band_column(lo, hi)));
    header
}

/// Writes reports that all share the same bands.
pub fn write_eval_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let bands: Vec<(f64, f64)> = reports
        .first()
        .map(|r| {
            r.phase_band_corr
                .iter()
                .map(|b| (b.band_low_hz, b.band_high_hz))
                .collect()
        })
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(eval_header(&bands)).map_err(csv_err)?;
    for r in reports {
        let these: Vec<(f64, f64)> = r
            .phase_band_corr
            .iter()
            .map(|b| (b.band_low_hz, b.band_high_hz))
            .collect();
        if these != bands {
            return Err(Error::InvalidArgument(format!(
                "report {} uses different bands",
                r.label
            )));
        }
        let mut row = vec![
            r.label.clone(),
            r.mse.to_string(),
            r.snr_db.to_string(),
            r.corrcoef.to_string(),
        ];
        row.extend(r.phase_band_corr.iter().map(|b| b.corrcoef.to_string()));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv<R: Read>(input: R) -> Result<Vec<EvalReport>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    let fixed = ["label", "mse", "snr_db", "corrcoef"];
    if header.len() < 4 || header.iter().take(4).ne(fixed.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header to start with {}",
            fixed.join(",")
        )));
    }
    let bands = header
        .iter()
        .skip(4)
        .map(parse_band_column)
        .collect::<Result<Vec<_>>>()?;
    let number = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("not a number: {s:?}")))
    };
    let mut reports = Vec::new();
    for record in rd.records() {
        let record = record.map_err(csv_err)?;
        let phase_band_corr = bands
            .iter()
            .zip(record.iter().skip(4))
            .map(|(&(lo, hi), v)| {
                Ok(BandCorr {
                    band_low_hz: lo,
                    band_high_hz: hi,
                    corrcoef: number(v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(EvalReport {
            label: record[0].to_string(),
            mse: number(&record[1])?,
            snr_db: number(&record[2])?,
            corrcoef: number(&record[3])?,
            phase_band_corr,
        });
    }
    Ok(reports)
}

pub fn write_training_log_csv<W: Write>(out: W, log: &TrainingLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_mse", "wall_time_s"])
        .map_err(csv_err)?;
    for r in &log.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_mse.to_string(),
            r.wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
