//! f-x prediction filtering ("FX-Decon").
//!
//! Each time window is transformed to the frequency domain trace by trace.
//! For every frequency slice a complex linear prediction filter is fitted
//! across traces in both directions, and each trace is replaced by the
//! average of its forward and backward predictions. Random noise is not
//! predictable from neighbouring traces and is attenuated; laterally
//! coherent events survive.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SeismicSection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FxConfig {
    pub window_length_samples: usize,
    /// Fraction of a window shared with its neighbour, in `[0, 0.9]`.
    pub window_overlap: f64,
    pub filter_length_traces: usize,
    /// Diagonal loading as a fraction of the zero-lag autocorrelation.
    pub prewhitening: f64,
    /// Frequencies outside this band pass through unfiltered.
    pub band_hz: Option<(f64, f64)>,
}

impl Default for FxConfig {
    fn default() -> Self {
        Self {
            window_length_samples: 64,
            window_overlap: 0.5,
            filter_length_traces: 4,
            prewhitening: 0.01,
            band_hz: None,
        }
    }
}

impl FxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_length_traces == 0 {
            return Err(Error::InvalidArgument("filter length must be positive".into()));
        }
        if self.window_length_samples < 2 * self.filter_length_traces {
            return Err(Error::InvalidArgument(format!(
                "window length {} shorter than twice the filter length {}",
                self.window_length_samples, self.filter_length_traces
            )));
        }
        if !(0.0..=0.9).contains(&self.window_overlap) {
            return Err(Error::InvalidArgument(format!(
                "window overlap {} outside [0, 0.9]",
                self.window_overlap
            )));
        }
        if !(self.prewhitening >= 0.0 && self.prewhitening.is_finite()) {
            return Err(Error::InvalidArgument("prewhitening must be non-negative".into()));
        }
        if let Some((lo, hi)) = self.band_hz {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::InvalidArgument(format!("invalid band ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Hann taper offset by half a sample so no tap is zero; shifted copies at
/// 50% overlap sum to one.
fn taper(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * (n as f64 + 0.5) / len as f64).cos()))
        .collect()
}

/// Solves `a · x = b` for a small dense complex system by Gaussian
/// elimination with partial pivoting.
fn solve_complex(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, z| acc.max(z.norm()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .expect("non-empty range");
        if a[pivot][col].norm() <= scale * 1e-14 {
            return Err(Error::Singular(format!(
                "pivot {} of {n} vanishes (|pivot| = {:e}, matrix scale {:e})",
                col,
                a[pivot][col].norm(),
                scale
            )));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= factor * src;
            }
            let delta = factor * b[col];
            b[row] -= delta;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Least-squares filter `f` with `target[j] ≈ Σ_k f_k · lagged(j, k)` over
/// the rows `rows`. The diagonal is loaded with `prewhitening` times the
/// mean zero-lag autocorrelation, `trace(R) / len`.
fn fit_filter(
    rows: &[(Complex64, Vec<Complex64>)],
    len: usize,
    prewhitening: f64,
) -> Result<Option<Vec<Complex64>>> {
    let zero = Complex64::new(0.0, 0.0);
    let mut r = vec![vec![zero; len]; len];
    let mut rhs = vec![zero; len];
    for (target, lagged) in rows {
        for p in 0..len {
            let cp = lagged[p].conj();
            rhs[p] += cp * target;
            for q in 0..len {
                r[p][q] += cp * lagged[q];
            }
        }
    }
    let trace: f64 = (0..len).map(|p| r[p][p].re).sum();
    if trace == 0.0 {
        return Ok(None);
    }
    let load = prewhitening * trace / len as f64;
    for (p, row) in r.iter_mut().enumerate() {
        row[p] += load;
    }
    solve_complex(r, rhs).map(Some)
}

/// Replaces each element of a frequency slice by the mean of its forward
/// and backward predictions across traces.
fn predict_slice(slice: &[Complex64], len: usize, prewhitening: f64) -> Result<Vec<Complex64>> {
    let n = slice.len();
    let zero = Complex64::new(0.0, 0.0);

    let forward_rows: Vec<_> = (len..n)
        .map(|j| (slice[j], (1..=len).map(|k| slice[j - k]).collect::<Vec<_>>()))
        .collect();
    let backward_rows: Vec<_> = (0..n - len)
        .map(|j| (slice[j], (1..=len).map(|k| slice[j + k]).collect::<Vec<_>>()))
        .collect();

    let forward = match fit_filter(&forward_rows, len, prewhitening)? {
        Some(f) => f,
        None => return Ok(vec![zero; n]),
    };
    let backward = match fit_filter(&backward_rows, len, prewhitening)? {
        Some(f) => f,
        None => return Ok(vec![zero; n]),
    };

    Ok((0..n)
        .map(|j| {
            let mut sum = zero;
            let mut count = 0.0;
            if j >= len {
                sum += (1..=len).map(|k| forward[k - 1] * slice[j - k]).sum::<Complex64>();
                count += 1.0;
            }
            if j + len < n {
                sum += (1..=len).map(|k| backward[k - 1] * slice[j + k]).sum::<Complex64>();
                count += 1.0;
            }
            sum / count
        })
        .collect())
}

/// f-x deconvolution of a section. Output shape equals input shape.
pub fn fx_decon(section: &SeismicSection, config: &FxConfig) -> Result<SeismicSection> {
    config.validate()?;
    let (m, n) = section.dim();
    let filt = config.filter_length_traces;
    if n < 2 * filt + 1 {
        return Err(Error::InvalidArgument(format!(
            "f-x filtering with filter length {filt} needs at least {} traces, got {n}",
            2 * filt + 1
        )));
    }
    let data = section.data();
    let win = config.window_length_samples;
    let hop = ((win as f64 * (1.0 - config.window_overlap)).round() as usize).clamp(1, win);
    let w = taper(win);
    let df = 1.0 / (win as f64 * section.sample_interval);
    let in_band = |k: usize| match config.band_hz {
        Some((lo, hi)) => {
            let f = k as f64 * df;
            f >= lo && f <= hi
        }
        None => true,
    };

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win);
    let ifft = planner.plan_fft_inverse(win);

    let mut out = Array2::<f64>::zeros((m, n));
    let mut weight = vec![0.0f64; m];
    let mut start = hop as i64 - win as i64;
    while start < m as i64 {
        let rows: Vec<Option<usize>> = (0..win)
            .map(|i| {
                let r = start + i as i64;
                (r >= 0 && r < m as i64).then_some(r as usize)
            })
            .collect();
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                weight[*r] += w[i];
            }
        }

        // spectra[j][k]: trace j, frequency bin k
        let mut spectra: Vec<Vec<Complex64>> = (0..n)
            .map(|j| {
                let mut buf: Vec<Complex64> = rows
                    .iter()
                    .zip(&w)
                    .map(|(r, wi)| Complex64::new(r.map_or(0.0, |r| data[(r, j)] * wi), 0.0))
                    .collect();
                fft.process(&mut buf);
                buf
            })
            .collect();

        let n_pos = win / 2 + 1;
        let filtered: Vec<Option<Vec<Complex64>>> = (0..n_pos)
            .into_par_iter()
            .map(|k| {
                if !in_band(k) {
                    return Ok(None);
                }
                let slice: Vec<Complex64> = spectra.iter().map(|s| s[k]).collect();
                predict_slice(&slice, filt, config.prewhitening).map(Some)
            })
            .collect::<Result<_>>()?;

        for (k, values) in filtered.into_iter().enumerate() {
            let Some(values) = values else { continue };
            for (j, v) in values.into_iter().enumerate() {
                spectra[j][k] = v;
                if k > 0 && k < win - k {
                    spectra[j][win - k] = v.conj();
                }
            }
        }
        for (j, spec) in spectra.iter_mut().enumerate() {
            ifft.process(spec);
            for (i, r) in rows.iter().enumerate() {
                if let Some(r) = r {
                    out[(*r, j)] += spec[i].re / win as f64;
                }
            }
        }
        start += hop as i64;
    }

    for (mut row, wsum) in out.rows_mut().into_iter().zip(&weight) {
        row.mapv_inplace(|v| v / wsum);
    }
    Ok(section.with_data(out)?.with_provenance(format!(
        "fxdecon: window={} overlap={} filter={} prewhitening={} band={}",
        config.window_length_samples,
        config.window_overlap,
        config.filter_length_traces,
        config.prewhitening,
        match config.band_hz {
            Some((lo, hi)) => format!("{lo}-{hi}Hz"),
            None => "all".to_string(),
        }
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::snr;
    use crate::synth::{add_noise, make_wedge, ricker, NoiseSpec, WedgeConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sec(data: Array2<f64>) -> SeismicSection {
        SeismicSection::from_time(data, 0.002).unwrap()
    }

    #[test]
    fn taper_partition_of_unity() {
        let w = taper(64);
        for i in 0..32 {
            assert!((w[i] + w[i + 32] - 1.0).abs() < 1e-12);
        }
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn complex_solver() {
        let c = |re, im| Complex64::new(re, im);
        let a = vec![
            vec![c(2.0, 1.0), c(0.5, -1.0)],
            vec![c(-1.0, 0.0), c(3.0, 2.0)],
        ];
        let x = vec![c(1.0, -2.0), c(0.25, 0.5)];
        let b: Vec<_> = a
            .iter()
            .map(|row| row[0] * x[0] + row[1] * x[1])
            .collect();
        let got = solve_complex(a, b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).norm() < 1e-12);
        }
        let singular = vec![vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(2.0, 0.0), c(4.0, 0.0)]];
        assert!(solve_complex(singular, vec![c(1.0, 0.0), c(2.0, 0.0)]).is_err());
    }

    #[test]
    fn zeros_stay_zero() {
        let out = fx_decon(&sec(Array2::zeros((100, 20))), &FxConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_traces() {
        let err = fx_decon(&sec(Array2::zeros((100, 8))), &FxConfig::default()).unwrap_err();
        assert!(err.to_string().contains("at least 9 traces"));
    }

    #[test]
    fn config_validation() {
        let bad = FxConfig {
            window_length_samples: 6,
            ..FxConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FxConfig {
            window_overlap: 0.95,
            ..FxConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noiseless_wedge_preserved() {
        let wedge = make_wedge(&WedgeConfig::default()).unwrap();
        let out = fx_decon(&wedge, &FxConfig::default()).unwrap();
        let s = snr(&wedge, &out).unwrap();
        assert!(s >= 25.0, "snr {s}");
    }

    #[test]
    fn noisy_wedge_improves() {
        let wedge = make_wedge(&WedgeConfig::default()).unwrap();
        let noisy = add_noise(&wedge, &NoiseSpec::gaussian(0.03, 7)).unwrap();
        let out = fx_decon(&noisy, &FxConfig::default()).unwrap();
        let before = snr(&wedge, &noisy).unwrap();
        let after = snr(&wedge, &out).unwrap();
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn plane_wave_preserved() {
        let (m, n) = (256, 24);
        let w = ricker(25.0, 0.002);
        let half = (w.len() / 2) as f64;
        let dip = 0.7;
        let data = Array2::from_shape_fn((m, n), |(i, j)| {
            let centre = 80.0 + dip * j as f64;
            // linear interpolation of the wavelet at a fractional delay
            let pos = i as f64 - centre + half;
            if pos < 0.0 || pos >= (w.len() - 1) as f64 {
                return 0.0;
            }
            let k = pos.floor() as usize;
            let t = pos - k as f64;
            w[k] * (1.0 - t) + w[k + 1] * t
        });
        let s = sec(data);
        let out = fx_decon(&s, &FxConfig::default()).unwrap();
        let peak = s.max_abs();
        for i in 16..m - 16 {
            for j in 0..n {
                let err = (out.data()[(i, j)] - s.data()[(i, j)]).abs();
                assert!(err <= 0.05 * peak, "({i},{j}) err {err}");
            }
        }
    }

    #[test]
    fn homogeneous_of_degree_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sec(Array2::from_shape_fn((90, 15), |_| rng.gen_range(-1.0..1.0)));
        let base = fx_decon(&s, &FxConfig::default()).unwrap();
        for c in [-2.5, 1e-3, 40.0] {
            let scaled = fx_decon(&sec(s.data() * c), &FxConfig::default()).unwrap();
            for (a, b) in base.data().iter().zip(scaled.data()) {
                assert!((a * c - b).abs() <= 1e-9 * (a * c).abs().max(1e-9 * c.abs()));
            }
        }
    }

    #[test]
    fn deterministic() {
        let wedge = make_wedge(&WedgeConfig::default()).unwrap();
        let noisy = add_noise(&wedge, &NoiseSpec::gaussian(0.05, 1)).unwrap();
        let a = fx_decon(&noisy, &FxConfig::default()).unwrap();
        let b = fx_decon(&noisy, &FxConfig::default()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn out_of_band_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sec(Array2::from_shape_fn((64, 12), |_| rng.gen_range(-1.0..1.0)));
        // a band above Nyquist leaves every bin untouched
        let config = FxConfig {
            band_hz: Some((300.0, 400.0)),
            ..FxConfig::default()
        };
        let out = fx_decon(&s, &config).unwrap();
        for (a, b) in s.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
