//! Synthetic data: the wedge model, Gaussian noise injection, procedural
//! training textures and Noise2Noise pair sampling.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{max_abs, SeismicSection};

/// Geometry and wavelet of the two-reflector wedge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WedgeConfig {
    pub n_samples: usize,
    pub n_traces: usize,
    pub top_reflector_row: usize,
    pub wedge_apex_trace: usize,
    pub max_thickness_rows: usize,
    pub wavelet_peak_frequency: f64,
    pub sample_interval_s: f64,
}

impl Default for WedgeConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_traces: 51,
            top_reflector_row: 60,
            wedge_apex_trace: 0,
            max_thickness_rows: 80,
            wavelet_peak_frequency: 30.0,
            sample_interval_s: 0.002,
        }
    }
}

impl WedgeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_samples == 0 || self.n_traces < 2 {
            return bad(format!(
                "wedge needs at least 1 sample and 2 traces, got {}x{}",
                self.n_samples, self.n_traces
            ));
        }
        if self.top_reflector_row == 0 || self.top_reflector_row >= self.n_samples {
            return bad(format!(
                "top_reflector_row {} outside (0, {})",
                self.top_reflector_row, self.n_samples
            ));
        }
        if self.top_reflector_row + self.max_thickness_rows >= self.n_samples {
            return bad("bottom reflector falls below the last sample".into());
        }
        if self.wedge_apex_trace + 1 >= self.n_traces {
            return bad(format!(
                "wedge_apex_trace {} must precede the last trace",
                self.wedge_apex_trace
            ));
        }
        if !(self.wavelet_peak_frequency > 0.0 && self.sample_interval_s > 0.0) {
            return bad("peak frequency and sample interval must be positive".into());
        }
        Ok(())
    }

    /// Offset in rows, possibly fractional, between the bottom and top
    /// reflector at `trace`.
    pub fn thickness_at(&self, trace: usize) -> f64 {
        if trace <= self.wedge_apex_trace {
            return 0.0;
        }
        let span = (self.n_traces - 1 - self.wedge_apex_trace) as f64;
        let frac = (trace - self.wedge_apex_trace) as f64 / span;
        frac * self.max_thickness_rows as f64
    }
}

/// Zero-phase Ricker wavelet `(1 − 2π²f²τ²)·exp(−π²f²τ²)`, zero outside
/// `|τ| ≤ 1.5/f`.
pub fn ricker_at(peak_frequency: f64, tau: f64) -> f64 {
    if tau.abs() * peak_frequency > 1.5 + 1e-9 {
        return 0.0;
    }
    let arg = PI * peak_frequency * tau;
    let arg2 = arg * arg;
    (1.0 - 2.0 * arg2) * (-arg2).exp()
}

/// [`ricker_at`] sampled every `dt`; the peak sits at index `len / 2`.
pub fn ricker(peak_frequency: f64, dt: f64) -> Vec<f64> {
    let half = (1.5 / (peak_frequency * dt) + 1e-9).floor() as i64;
    (-half..=half)
        .map(|k| ricker_at(peak_frequency, k as f64 * dt))
        .collect()
}

/// Builds the clean wedge section, normalized to `[-1, 1]`.
///
/// Each trace convolves the Ricker wavelet with a +1 spike on the flat top
/// reflector and a −1 spike on the dipping bottom reflector. The bottom
/// spike sits at a fractional row, so the wavelet is evaluated at the exact
/// delay instead of being snapped to the sample grid; this keeps the dipping
/// event linear across traces. A section with no energy (zero thickness
/// everywhere) is returned unscaled.
pub fn make_wedge(config: &WedgeConfig) -> Result<SeismicSection> {
    config.validate()?;
    let wavelet_len = ricker(config.wavelet_peak_frequency, config.sample_interval_s).len();
    if wavelet_len > config.n_samples {
        return Err(Error::InvalidArgument(format!(
            "wavelet of {} samples longer than {} samples",
            wavelet_len, config.n_samples
        )));
    }
    let (m, n) = (config.n_samples, config.n_traces);
    let (f, dt) = (config.wavelet_peak_frequency, config.sample_interval_s);
    let top = config.top_reflector_row as f64;
    let mut data = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        let bottom = top + config.thickness_at(j);
        for (spike_row, coefficient) in [(top, 1.0), (bottom, -1.0)] {
            for i in 0..m {
                data[(i, j)] += coefficient * ricker_at(f, (i as f64 - spike_row) * dt);
            }
        }
    }

    let peak = max_abs(data.view());
    if peak > 0.0 {
        data.mapv_inplace(|v| v / peak);
    }
    Ok(SeismicSection::from_time(data, config.sample_interval_s)?.with_provenance(format!(
        "wedge-gen: {}x{} f={}Hz dt={}s top={} apex={} thick={}",
        m,
        n,
        config.wavelet_peak_frequency,
        config.sample_interval_s,
        config.top_reflector_row,
        config.wedge_apex_trace,
        config.max_thickness_rows
    )))
}

/// Additive Gaussian noise description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub mean: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Rows above this one are left clean.
    pub region_start_row: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            sigma: 0.0,
            seed: 0,
            region_start_row: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            ..Self::default()
        }
    }
}

/// Returns `section + n` with `n ~ N(mean, sigma²)` i.i.d. on every row at
/// or below `region_start_row` and zero above. Deterministic in `seed`.
pub fn add_noise(section: &SeismicSection, spec: &NoiseSpec) -> Result<SeismicSection> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite() && spec.mean.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid noise mean {} / sigma {}",
            spec.mean, spec.sigma
        )));
    }
    if spec.region_start_row >= section.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "region_start_row {} beyond {} samples",
            spec.region_start_row,
            section.n_samples()
        )));
    }
    let dist = Normal::new(spec.mean, spec.sigma)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = section.data().clone();
    for mut row in data.rows_mut().into_iter().skip(spec.region_start_row) {
        for v in row.iter_mut() {
            *v += dist.sample(&mut rng);
        }
    }
    Ok(section.with_data(data)?.with_provenance(format!(
        "corrupt: gaussian mean={} sigma={} seed={} from_row={}",
        spec.mean, spec.sigma, spec.seed, spec.region_start_row
    )))
}

/// Noise2Noise training pairs: `inputs[i]` and `targets[i]` share the same
/// clean patch under independent noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePairBatch {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<Array2<f64>>,
    pub patch_size: usize,
}

impl NoisePairBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Affine map of `patch` onto `[-1, 1]`; constant patches become zeros.
pub fn rescale_unit(patch: &mut Array2<f64>) {
    let (lo, hi) = patch
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        let scale = 2.0 / (hi - lo);
        patch.mapv_inplace(|v| ((v - lo) * scale - 1.0).clamp(-1.0, 1.0));
    } else {
        patch.fill(0.0);
    }
}

fn validate_corpus(corpus: &[Array2<f64>], patch_size: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch_size must be positive".into()));
    }
    if let Some(item) = corpus
        .iter()
        .find(|item| item.nrows() < patch_size || item.ncols() < patch_size)
    {
        return Err(Error::InvalidArgument(format!(
            "patch {patch_size} larger than corpus item {:?}",
            item.dim()
        )));
    }
    Ok(())
}

fn random_patch(corpus: &[Array2<f64>], patch_size: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let item = &corpus[rng.gen_range(0..corpus.len())];
    let r0 = rng.gen_range(0..=item.nrows() - patch_size);
    let c0 = rng.gen_range(0..=item.ncols() - patch_size);
    let mut patch = item
        .slice(s![r0..r0 + patch_size, c0..c0 + patch_size])
        .to_owned();
    rescale_unit(&mut patch);
    patch
}

fn draw_sigma(sigma_range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = sigma_range;
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn check_sigma_range(sigma_range: (f64, f64)) -> Result<()> {
    let (lo, hi) = sigma_range;
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid sigma range ({lo}, {hi})"
        )));
    }
    Ok(())
}

fn noisy_copy(patch: &Array2<f64>, dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    patch.mapv(|v| v + dist.sample(rng))
}

/// Draws `count` random patches from `corpus` (uniform item, uniform
/// position), rescales each to `[-1, 1]`, and corrupts it twice with
/// independent Gaussian noise of a per-patch sigma drawn from `sigma_range`.
pub fn sample_noise_pairs(
    corpus: &[Array2<f64>],
    patch_size: usize,
    count: usize,
    sigma_range: (f64, f64),
    seed: u64,
) -> Result<NoisePairBatch> {
    validate_corpus(corpus, patch_size)?;
    check_sigma_range(sigma_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let patch = random_patch(corpus, patch_size, &mut rng);
        let sigma = draw_sigma(sigma_range, &mut rng);
        let dist = Normal::new(0.0, sigma).expect("sigma checked");
        inputs.push(noisy_copy(&patch, &dist, &mut rng));
        targets.push(noisy_copy(&patch, &dist, &mut rng));
    }
    Ok(NoisePairBatch {
        inputs,
        targets,
        patch_size,
    })
}

/// Like [`sample_noise_pairs`] but the targets are the clean patches. Used
/// for validation, where the held-out ground truth is known.
pub fn sample_clean_pairs(
    corpus: &[Array2<f64>],
    patch_size: usize,
    count: usize,
    sigma_range: (f64, f64),
    seed: u64,
) -> Result<NoisePairBatch> {
    validate_corpus(corpus, patch_size)?;
    check_sigma_range(sigma_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let patch = random_patch(corpus, patch_size, &mut rng);
        let sigma = draw_sigma(sigma_range, &mut rng);
        let dist = Normal::new(0.0, sigma).expect("sigma checked");
        inputs.push(noisy_copy(&patch, &dist, &mut rng));
        targets.push(patch);
    }
    Ok(NoisePairBatch {
        inputs,
        targets,
        patch_size,
    })
}

fn fft2(data: &mut Array2<Complex<f64>>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut buf = vec![Complex::default(); w.max(h)];
    for mut row in data.rows_mut() {
        buf[..w].iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        row_fft.process(&mut buf[..w]);
        row.iter_mut().zip(&buf[..w]).for_each(|(v, b)| *v = *b);
    }
    for mut col in data.columns_mut() {
        buf[..h].iter_mut().zip(col.iter()).for_each(|(b, v)| *b = *v);
        col_fft.process(&mut buf[..h]);
        col.iter_mut().zip(&buf[..h]).for_each(|(v, b)| *v = *b);
    }
}

/// Signed frequency (cycles per sample) of FFT bin `k` out of `n`.
fn bin_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// White Gaussian noise shaped by an anisotropic Gaussian low-pass filter.
fn band_limited_field(
    dim: (usize, usize),
    corr_len: (f64, f64),
    angle: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let (h, w) = dim;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut spec = Array2::from_shape_fn(dim, |_| Complex::new(normal.sample(rng), 0.0));
    fft2(&mut spec, false);
    let (c, s) = (angle.cos(), angle.sin());
    for ((i, j), v) in spec.indexed_iter_mut() {
        let (fy, fx) = (bin_freq(i, h), bin_freq(j, w));
        let u = c * fx + s * fy;
        let v_ = -s * fx + c * fy;
        let g = (-2.0 * PI * PI * (u * u * corr_len.0 * corr_len.0 + v_ * v_ * corr_len.1 * corr_len.1))
            .exp();
        *v *= g;
    }
    fft2(&mut spec, true);
    spec.mapv(|z| z.re)
}

/// One procedural grayscale texture in `[-1, 1]`.
///
/// Mixes three families: smooth band-limited random fields, dipping layered
/// patterns (a 1D random profile swept along a warped direction) and
/// piecewise-constant blobs with sharp edges.
pub fn procedural_texture(dim: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (h, w) = dim;
    let kind = rng.gen_range(0..3);
    let mut out = match kind {
        0 => {
            let a = rng.gen_range(0.8..8.0);
            let b = a * rng.gen_range(0.3..3.0);
            let angle = rng.gen_range(0.0..PI);
            band_limited_field(dim, (a, b), angle, rng)
        }
        1 => {
            let profile_len = 2 * (h + w);
            let thickness = rng.gen_range(1.0..6.0);
            let profile = band_limited_field((1, profile_len), (0.0, thickness), 0.0, rng);
            let profile = profile.row(0).to_owned();
            let warp = band_limited_field(dim, (12.0, 12.0), 0.0, rng);
            let warp_scale = rng.gen_range(0.0..4.0) / warp.std(0.0).max(1e-12);
            let dip = rng.gen_range(-0.8..0.8_f64);
            let offset = (h + w) as f64 / 2.0;
            Array2::from_shape_fn(dim, |(i, j)| {
                let pos = i as f64 + dip * (j as f64 - w as f64 / 2.0)
                    + warp_scale * warp[(i, j)]
                    + offset;
                let k = (pos.max(0.0) as usize).min(profile_len - 2);
                let t = (pos - k as f64).clamp(0.0, 1.0);
                profile[k] * (1.0 - t) + profile[k + 1] * t
            })
        }
        _ => {
            let a = rng.gen_range(3.0..10.0);
            let base = band_limited_field(dim, (a, a), 0.0, rng);
            let levels: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sd = base.std(0.0).max(1e-12);
            let smooth = band_limited_field(dim, (1.5, 1.5), 0.0, rng);
            let ssd = smooth.std(0.0).max(1e-12);
            Array2::from_shape_fn(dim, |ix| {
                let z = base[ix] / sd;
                let level = if z < -0.6 {
                    levels[0]
                } else if z < 0.0 {
                    levels[1]
                } else if z < 0.6 {
                    levels[2]
                } else {
                    levels[3]
                };
                level + 0.15 * smooth[ix] / ssd
            })
        }
    };
    rescale_unit(&mut out);
    out
}

/// `count` procedural textures of shape `dim`, deterministic in `seed`.
pub fn procedural_corpus(count: usize, dim: (usize, usize), seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| procedural_texture(dim, &mut rng)).collect()
}
