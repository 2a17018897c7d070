//! Quality metrics: MSE, SNR, correlation coefficient and phase-spectrum
//! comparisons.

use std::f64::consts::PI;

use ndarray::{Array1, ArrayView1};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxisUnit, SeismicSection};

/// Mean of squared element-wise differences.
pub fn mse(a: &SeismicSection, b: &SeismicSection) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Signal-to-noise ratio in dB of `test` against the reference `clean`:
/// `10·log10(Σ clean² / Σ (test − clean)²)`.
pub fn snr(clean: &SeismicSection, test: &SeismicSection) -> Result<f64> {
    clean.check_same_shape(test)?;
    let signal: f64 = clean.data().iter().map(|v| v * v).sum();
    let noise: f64 = clean
        .data()
        .iter()
        .zip(test.data())
        .map(|(c, t)| (t - c) * (t - c))
        .sum();
    if noise == 0.0 {
        return Err(Error::InfiniteSnr);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Pearson correlation over the flattened grids.
pub fn corrcoef(a: &SeismicSection, b: &SeismicSection) -> Result<f64> {
    a.check_same_shape(b)?;
    let flat_a: Array1<f64> = a.data().iter().copied().collect();
    let flat_b: Array1<f64> = b.data().iter().copied().collect();
    pearson(flat_a.view(), flat_b.view())
}

pub(crate) fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Copy of one trace (column).
pub fn extract_trace(section: &SeismicSection, trace_index: usize) -> Result<Array1<f64>> {
    if trace_index >= section.n_traces() {
        return Err(Error::InvalidArgument(format!(
            "trace {trace_index} out of range for {} traces",
            section.n_traces()
        )));
    }
    Ok(section.data().column(trace_index).to_owned())
}

/// Converts a depth sample interval to two-way time using a constant velocity.
pub fn depth_to_time_interval(dz_m: f64, velocity_m_s: f64) -> Result<f64> {
    if !(dz_m > 0.0 && velocity_m_s > 0.0) {
        return Err(Error::InvalidArgument(
            "depth interval and velocity must be positive".into(),
        ));
    }
    Ok(2.0 * dz_m / velocity_m_s)
}

/// Phase curve aggregated across traces.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    pub frequency_hz: Vec<f64>,
    pub phase_rad: Vec<f64>,
}

/// Per-trace DFT along the sample axis; the phase at each frequency bin is
/// the circular mean (angle of the summed unit phasors) across traces.
/// Only bins with `f ≤ f_max_hz` are returned.
pub fn phase_spectrum(section: &SeismicSection, dt_s: f64, f_max_hz: f64) -> Result<PhaseCurve> {
    let m = section.n_samples();
    if m < 16 {
        return Err(Error::InvalidArgument(format!(
            "phase spectrum needs at least 16 samples, got {m}"
        )));
    }
    if dt_s.is_nan() || dt_s <= 0.0 {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let nyquist = 0.5 / dt_s;
    if nyquist < f_max_hz {
        return Err(Error::InvalidArgument(format!(
            "dt {dt_s}s too coarse: Nyquist {nyquist} Hz below f_max {f_max_hz} Hz"
        )));
    }
    let df = 1.0 / (m as f64 * dt_s);
    let n_bins = ((f_max_hz / df + 1e-9).floor() as usize + 1).min(m / 2 + 1);

    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut phasor_sum = vec![Complex::new(0.0, 0.0); n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    for trace in section.data().columns() {
        buf.iter_mut()
            .zip(trace.iter())
            .for_each(|(b, &v)| *b = Complex::new(v, 0.0));
        fft.process(&mut buf);
        for (acc, z) in phasor_sum.iter_mut().zip(&buf) {
            let mag = z.norm();
            if mag > 0.0 {
                *acc += z / mag;
            }
        }
    }
    Ok(PhaseCurve {
        frequency_hz: (0..n_bins).map(|k| k as f64 * df).collect(),
        phase_rad: phasor_sum.iter().map(|z| z.im.atan2(z.re)).collect(),
    })
}

/// Removes 2π jumps between consecutive samples.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p - phase[i - 1];
            if d > PI {
                offset -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            } else if d < -PI {
                offset += 2.0 * PI * ((-d + PI) / (2.0 * PI)).floor();
            }
        }
        out.push(p + offset);
    }
    out
}

/// Band-wise Pearson correlation between two phase curves sampled on the
/// same frequency grid. A band `[low, high)` takes bins with
/// `low ≤ f < high`; the last band is closed on the right. Phases are
/// unwrapped within each band before correlating.
pub fn phase_curve_band_corr(
    clean: &PhaseCurve,
    test: &PhaseCurve,
    bands: &[(f64, f64)],
) -> Result<Vec<f64>> {
    if clean.frequency_hz != test.frequency_hz {
        return Err(Error::InvalidArgument(
            "phase curves on different frequency grids".into(),
        ));
    }
    bands
        .iter()
        .enumerate()
        .map(|(b, &(low, high))| {
            let last = b + 1 == bands.len();
            let idx: Vec<usize> = clean
                .frequency_hz
                .iter()
                .enumerate()
                .filter(|(_, &f)| f >= low && (f < high || (last && f <= high)))
                .map(|(i, _)| i)
                .collect();
            if idx.len() < 3 {
                return Err(Error::BandTooNarrow {
                    low,
                    high,
                    bins: idx.len(),
                });
            }
            let pick = |curve: &PhaseCurve| {
                Array1::from(unwrap_phase(
                    &idx.iter().map(|&i| curve.phase_rad[i]).collect::<Vec<_>>(),
                ))
            };
            let (a, t) = (pick(clean), pick(test));
            if a == t {
                return Ok(1.0);
            }
            pearson(a.view(), t.view())
        })
        .collect()
}

/// Sample interval in seconds for phase analysis. Depth sections require a
/// conversion velocity.
pub fn time_interval(section: &SeismicSection, velocity_m_s: Option<f64>) -> Result<f64> {
    match section.axis_unit {
        AxisUnit::Time => Ok(section.sample_interval),
        AxisUnit::Depth => match velocity_m_s {
            Some(v) => depth_to_time_interval(section.sample_interval, v),
            None => Err(Error::InvalidArgument(
                "depth section needs a conversion velocity for phase analysis".into(),
            )),
        },
    }
}

/// Band-wise phase-spectrum correlation between two sections.
pub fn phase_band_corr(
    clean: &SeismicSection,
    test: &SeismicSection,
    dt_s: f64,
    bands: &[(f64, f64)],
) -> Result<Vec<f64>> {
    clean.check_same_shape(test)?;
    let f_max = bands.iter().map(|b| b.1).fold(0.0, f64::max);
    let a = phase_spectrum(clean, dt_s, f_max)?;
    let b = phase_spectrum(test, dt_s, f_max)?;
    phase_curve_band_corr(&a, &b, bands)
}

/// The six 10 Hz bands from 0 to 60 Hz.
pub fn default_bands() -> Vec<(f64, f64)> {
    (0..6).map(|k| (10.0 * k as f64, 10.0 * (k + 1) as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCorr {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub corrcoef: f64,
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub mse: f64,
    /// `+inf` when the test equals the clean reference.
    pub snr_db: f64,
    pub corrcoef: f64,
    pub phase_band_corr: Vec<BandCorr>,
}

/// Computes the full metric suite of `test` against `clean`.
pub fn evaluate(
    label: &str,
    clean: &SeismicSection,
    test: &SeismicSection,
    dt_s: f64,
    bands: &[(f64, f64)],
) -> Result<EvalReport> {
    let snr_db = match snr(clean, test) {
        Ok(v) => v,
        Err(Error::InfiniteSnr) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let corr = phase_band_corr(clean, test, dt_s, bands)?;
    Ok(EvalReport {
        label: label.to_string(),
        mse: mse(clean, test)?,
        snr_db,
        corrcoef: corrcoef(clean, test)?,
        phase_band_corr: bands
            .iter()
            .zip(corr)
            .map(|(&(lo, hi), c)| BandCorr {
                band_low_hz: lo,
                band_high_hz: hi,
                corrcoef: c,
            })
            .collect(),
    })
}
