//! Amplitude-band clip & denoise.
//!
//! An image denoiser trained on data in `[-1, 1]` flattens low-amplitude
//! seismic energy when a section is dominated by a few strong events. The
//! section is instead split into amplitude bands `α_{k-1} < |x| ≤ α_k`; each
//! band is denoised from a copy of the input clipped at `α_k` and rescaled
//! by `1/α_k`, and the band results are stitched back together.

use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mask_complement, BinaryMask, SeismicSection};

/// Image-domain denoiser `F_I` operating on values nominally in `[-1, 1]`.
pub trait Denoiser: Sync {
    fn denoise(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(input.to_owned())
    }
}

/// Adapts a closure into a [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(ArrayView2<'_, f64>) -> Array2<f64> + Sync,
{
    fn denoise(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok((self.0)(input))
    }
}

/// Strictly increasing positive thresholds `α₁ < … < α_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClipSchedule {
    alphas: Vec<f64>,
}

impl ClipSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidArgument("clip schedule is empty".into()));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "clip thresholds must be positive and finite: {alphas:?}"
            )));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "clip thresholds must be strictly increasing: {alphas:?}"
            )));
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn top(&self) -> f64 {
        *self.alphas.last().expect("non-empty schedule")
    }

    /// Index of the band holding an amplitude of magnitude `abs`: the first
    /// `k` with `abs ≤ α_k`, or the top band when `abs > α_t`.
    pub fn band_of(&self, abs: f64) -> usize {
        self.alphas
            .partition_point(|&a| a < abs)
            .min(self.alphas.len() - 1)
    }
}

impl TryFrom<Vec<f64>> for ClipSchedule {
    type Error = Error;

    fn try_from(alphas: Vec<f64>) -> Result<Self> {
        Self::new(alphas)
    }
}

impl From<ClipSchedule> for Vec<f64> {
    fn from(schedule: ClipSchedule) -> Self {
        schedule.alphas
    }
}

/// Evenly spaced thresholds `k·A/t` for `k = 1..=t`, `A` the max amplitude.
pub fn default_schedule(section: &SeismicSection, t: usize) -> Result<ClipSchedule> {
    if t == 0 {
        return Err(Error::InvalidArgument("t must be at least 1".into()));
    }
    let a = section.max_abs();
    if a == 0.0 {
        return Err(Error::DegenerateAmplitude);
    }
    ClipSchedule::new((1..=t).map(|k| k as f64 * a / t as f64).collect())
}

/// Element-wise clamp to `[-alpha, alpha]`.
pub fn clip_values(values: ArrayView2<'_, f64>, alpha: f64) -> Array2<f64> {
    values.mapv(|v| {
        if v < -alpha {
            -alpha
        } else if v > alpha {
            alpha
        } else {
            v
        }
    })
}

pub fn clip(section: &SeismicSection, alpha: f64) -> Result<SeismicSection> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {alpha}"
        )));
    }
    section.with_data(clip_values(section.view(), alpha))
}

/// Disjoint amplitude-band masks partitioning a section.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDecomposition {
    pub band_masks: Vec<BinaryMask>,
    pub schedule: ClipSchedule,
}

pub fn decompose(section: &SeismicSection, schedule: &ClipSchedule) -> BandDecomposition {
    decompose_values(section.view(), schedule)
}

fn decompose_values(values: ArrayView2<'_, f64>, schedule: &ClipSchedule) -> BandDecomposition {
    let labels = values.mapv(|v| schedule.band_of(v.abs()));
    let band_masks = (0..schedule.len())
        .map(|k| BinaryMask::from_fn(values.dim(), |ix| labels[ix] == k))
        .collect();
    BandDecomposition {
        band_masks,
        schedule: schedule.clone(),
    }
}

impl BandDecomposition {
    /// `Σ B_k` is the all-ones mask.
    pub fn is_partition(&self) -> bool {
        let dim = match self.band_masks.first() {
            Some(m) => m.dim(),
            None => return false,
        };
        mask_complement(dim, &self.band_masks)
            .map(|rest| rest.is_all_zeros())
            .unwrap_or(false)
    }
}

/// Clip & denoise composition of an image denoiser into a seismic denoiser.
///
/// Band `k < t` takes `α_k · F(C(x, α_k) / α_k)`; the top band takes
/// `α_t · F(x / α_t)` on the unclipped input so amplitudes beyond `α_t` are
/// still covered. The `t` denoiser calls run concurrently and are combined
/// in band order.
pub fn clip_denoise<D: Denoiser + ?Sized>(
    section: &SeismicSection,
    schedule: &ClipSchedule,
    denoiser: &D,
) -> Result<SeismicSection> {
    let x = section.view();
    let bands = decompose_values(x, schedule);
    let alphas = schedule.alphas();
    let t = alphas.len();

    let outputs: Vec<Array2<f64>> = (0..t)
        .into_par_iter()
        .map(|k| {
            let alpha = alphas[k];
            let input = if k + 1 == t {
                x.mapv(|v| v / alpha)
            } else {
                clip_values(x, alpha).mapv(|v| v / alpha)
            };
            let out = denoiser.denoise(input.view())?;
            if out.dim() != x.dim() {
                return Err(Error::ShapeMismatch {
                    expected: x.dim(),
                    got: out.dim(),
                });
            }
            Ok(out.mapv(|v| v * alpha))
        })
        .collect::<Result<_>>()?;

    let mut composed = Array2::<f64>::zeros(x.dim());
    for (mask, out) in bands.band_masks.iter().zip(&outputs) {
        Zip::from(&mut composed)
            .and(mask.data())
            .and(out)
            .for_each(|c, &m, &o| {
                if m == 1 {
                    *c = o;
                }
            });
    }

    let mut result = section.with_data(composed)?;
    let peak = section.max_abs();
    if peak > schedule.top() {
        result.push_provenance(format!(
            "warning: top threshold {} below max amplitude {}; top band absorbs the excess",
            schedule.top(),
            peak
        ));
    }
    result.push_provenance(format!("clip-denoise: schedule {:?}", alphas));
    Ok(result)
}
