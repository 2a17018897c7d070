//! Seismic section data model and elementary grid transforms.
//!
//! A [`SeismicSection`] is a row-major `samples × traces` grid: the first axis
//! runs along time or depth, the second across traces.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical meaning of the sample axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisUnit {
    /// Sample interval in seconds.
    Time,
    /// Sample interval in meters.
    Depth,
}

impl AxisUnit {
    pub fn interval_unit(self) -> &'static str {
        match self {
            AxisUnit::Time => "s",
            AxisUnit::Depth => "m",
        }
    }
}

/// 2D amplitude grid with axis metadata and an append-only lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct SeismicSection {
    data: Array2<f64>,
    pub sample_interval: f64,
    pub axis_unit: AxisUnit,
    /// One entry per pipeline stage that produced or touched this section.
    pub provenance: Vec<String>,
}

impl SeismicSection {
    /// Builds a section, rejecting empty grids, non-finite amplitudes and
    /// non-positive sample intervals.
    pub fn new(data: Array2<f64>, sample_interval: f64, axis_unit: AxisUnit) -> Result<Self> {
        let (m, n) = data.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidSection(format!("empty grid {m}x{n}")));
        }
        if !(sample_interval > 0.0 && sample_interval.is_finite()) {
            return Err(Error::InvalidSection(format!(
                "sample interval must be positive, got {sample_interval}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSection(format!(
                "non-finite amplitude at flat index {pos}"
            )));
        }
        Ok(Self {
            data,
            sample_interval,
            axis_unit,
            provenance: Vec::new(),
        })
    }

    /// Time-axis section with the given interval in seconds.
    pub fn from_time(data: Array2<f64>, dt_s: f64) -> Result<Self> {
        Self::new(data, dt_s, AxisUnit::Time)
    }

    /// New section sharing this one's metadata but holding `data`.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        let mut out = Self::new(data, self.sample_interval, self.axis_unit)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    pub fn with_provenance(mut self, entry: impl Into<String>) -> Self {
        self.provenance.push(entry.into());
        self
    }

    pub fn push_provenance(&mut self, entry: impl Into<String>) {
        self.provenance.push(entry.into());
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// `(samples, traces)`.
    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_traces(&self) -> usize {
        self.data.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(self.data.view())
    }

    pub(crate) fn check_same_shape(&self, other: &SeismicSection) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

pub fn max_abs(data: ArrayView2<'_, f64>) -> f64 {
    data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Divides every amplitude by the section's max absolute amplitude.
///
/// Returns the scaled section and the scale, so that `denormalize` with the
/// same scale recovers the input.
pub fn normalize(section: &SeismicSection) -> Result<(SeismicSection, f64)> {
    let scale = section.max_abs();
    if scale == 0.0 {
        return Err(Error::DegenerateAmplitude);
    }
    let data = section.data.mapv(|v| v / scale);
    Ok((section.with_data(data)?, scale))
}

pub fn denormalize(section: &SeismicSection, scale: f64) -> Result<SeismicSection> {
    section.with_data(section.data.mapv(|v| v * scale))
}

/// Summary statistics of a section's amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionStats {
    pub max_abs: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Computes max-abs, mean, population variance and an equal-width histogram
/// over `[min, max]` with the rightmost bin closed.
pub fn stats(section: &SeismicSection, n_bins: usize) -> Result<SectionStats> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    let data = section.data();
    let count = data.len() as f64;
    let mean = data.sum() / count;
    let variance = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });

    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in data.iter() {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: lo + width * i as f64,
            upper: if i + 1 == n_bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count,
        })
        .collect();

    Ok(SectionStats {
        max_abs: section.max_abs(),
        mean,
        variance,
        histogram,
    })
}

/// A {0,1} grid marking cells of a parent section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn zeros(dim: (usize, usize)) -> Self {
        Self {
            data: Array2::zeros(dim),
        }
    }

    pub fn ones(dim: (usize, usize)) -> Self {
        Self {
            data: Array2::ones(dim),
        }
    }

    pub fn from_fn(dim: (usize, usize), mut f: impl FnMut((usize, usize)) -> bool) -> Self {
        Self {
            data: Array2::from_shape_fn(dim, |ix| u8::from(f(ix))),
        }
    }

    /// Rejects entries other than 0 or 1.
    pub fn from_array(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn get(&self, ix: (usize, usize)) -> bool {
        self.data[ix] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
    }

    pub fn is_all_zeros(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Element-wise product `values ⊙ self`.
    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        Zip::from(&mut out).and(&self.data).for_each(|v, &m| {
            if m == 0 {
                *v = 0.0;
            }
        });
        out
    }
}

/// The all-ones mask minus the element-wise sum of `masks`.
pub fn mask_complement(dim: (usize, usize), masks: &[BinaryMask]) -> Result<BinaryMask> {
    let mut sum = Array2::<u32>::zeros(dim);
    for mask in masks {
        if mask.dim() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: mask.dim(),
            });
        }
        Zip::from(&mut sum)
            .and(&mask.data)
            .for_each(|s, &m| *s += u32::from(m));
    }
    if sum.iter().any(|&s| s > 1) {
        return Err(Error::MasksNotDisjoint);
    }
    Ok(BinaryMask {
        data: sum.mapv(|s| 1 - s as u8),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn section(data: Array2<f64>) -> SeismicSection {
        SeismicSection::from_time(data, 0.002).unwrap()
    }

    #[test]
    fn normalize_divides_by_max_abs() {
        let (out, scale) = normalize(&section(array![[2.0, -4.0], [1.0, 0.0]])).unwrap();
        assert_eq!(scale, 4.0);
        assert_eq!(out.data(), &array![[0.5, -1.0], [0.25, 0.0]]);

        let (out, scale) = normalize(&section(array![[1.0, -1.0]])).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out.data(), &array![[1.0, -1.0]]);
    }

    #[test]
    fn normalize_random_grid_hits_unit_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = Array2::from_shape_fn((200, 51), |_| rng.gen_range(-3.0..3.0));
        let (out, _) = normalize(&section(data)).unwrap();
        assert_eq!(out.max_abs(), 1.0);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn normalize_rejects_zero_section() {
        let err = normalize(&section(Array2::zeros((3, 3)))).unwrap_err();
        assert_eq!(err.to_string(), "degenerate amplitude range");
    }

    #[test]
    fn section_rejects_bad_input() {
        assert!(SeismicSection::from_time(Array2::zeros((0, 3)), 0.002).is_err());
        assert!(SeismicSection::from_time(array![[f64::NAN]], 0.002).is_err());
        assert!(SeismicSection::from_time(array![[1.0]], 0.0).is_err());
    }

    #[test]
    fn stats_direct_values() {
        let s = stats(&section(array![[1.0, -2.0, 3.0]]), 4).unwrap();
        assert_eq!(s.max_abs, 3.0);
        assert!((s.mean - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
        // 3.0 sits on the closed right edge
        assert_eq!(s.histogram[3].count, 1);

        let s = stats(&section(Array2::from_elem((4, 4), 5.0)), 3).unwrap();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.max_abs, 5.0);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 16);
    }

    #[test]
    fn stats_variance_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Normal::new(0.0, 0.1).unwrap();
        let data = Array2::from_shape_fn((100, 100), |_| dist.sample(&mut rng));
        let s = stats(&section(data), 10).unwrap();
        assert!((s.variance - 0.01).abs() / 0.01 < 0.05, "{}", s.variance);

        let dist = Normal::new(0.3, 2.0).unwrap();
        let data = Array2::from_shape_fn((1000, 1000), |_| dist.sample(&mut rng));
        let s = stats(&section(data), 10).unwrap();
        assert!((s.variance - 4.0).abs() / 4.0 < 0.01, "{}", s.variance);
    }

    #[test]
    fn stats_rejects_zero_bins() {
        assert!(stats(&section(array![[1.0]]), 0).is_err());
    }

    #[test]
    fn complement_cases() {
        let dim = (2, 2);
        assert!(mask_complement(dim, &[]).unwrap().is_all_ones());
        assert!(mask_complement(dim, &[BinaryMask::ones(dim)])
            .unwrap()
            .is_all_zeros());
        let top = BinaryMask::from_fn(dim, |(i, _)| i == 0);
        let bottom = BinaryMask::from_fn(dim, |(i, _)| i == 1);
        assert!(mask_complement(dim, &[top.clone(), bottom])
            .unwrap()
            .is_all_zeros());
        let err = mask_complement(dim, &[top.clone(), top]).unwrap_err();
        assert_eq!(err.to_string(), "masks not disjoint");
    }

    #[test]
    fn mask_apply_zeroes_unmarked_cells() {
        let mask = BinaryMask::from_array(array![[1, 0], [0, 1]]).unwrap();
        let out = mask.apply(array![[2.0, 3.0], [4.0, 5.0]].view());
        assert_eq!(out, array![[2.0, 0.0], [0.0, 5.0]]);
        assert!(BinaryMask::from_array(array![[2u8]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
                prop_assume!(values.iter().any(|v| *v != 0.0));
                let s = section(Array2::from_shape_vec((3, 4), values).unwrap());
                let (n, scale) = normalize(&s).unwrap();
                let back = denormalize(&n, scale).unwrap();
                for (a, b) in s.data().iter().zip(back.data()) {
                    let tol = 1e-12 * a.abs().max(f64::MIN_POSITIVE);
                    prop_assert!((a - b).abs() <= tol, "{a} vs {b}");
                }
            }

            #[test]
            fn complement_partitions(labels in proptest::collection::vec(0usize..4, 20)) {
                // each cell goes to one of 3 masks or to none (label 3)
                let dim = (4, 5);
                let masks: Vec<BinaryMask> = (0..3)
                    .map(|k| BinaryMask::from_fn(dim, |(i, j)| labels[i * 5 + j] == k))
                    .collect();
                let rest = mask_complement(dim, &masks).unwrap();
                for i in 0..4 {
                    for j in 0..5 {
                        let total: u8 = masks.iter().map(|m| m.data()[(i, j)]).sum::<u8>()
                            + rest.data()[(i, j)];
                        prop_assert_eq!(total, 1);
                    }
                }
            }
        }
    }
}
