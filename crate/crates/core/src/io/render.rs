use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SeismicSection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Gray,
    /// Blue for negative, white at the mean, red for positive.
    Seismic,
}

/// Half-width of the display range: the `percentile` of absolute deviations
/// from the mean (nearest rank).
pub fn clip_level(values: &[f64], mean: f64, percentile: f64) -> f64 {
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * dev.len() as f64).ceil() as usize;
    dev[rank.clamp(1, dev.len()) - 1]
}

/// Maps every sample to `[-1, 1]` around the mean with a symmetric clip.
fn scaled(section: &SeismicSection, percentile: f64) -> Result<Vec<f64>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "clip percentile {percentile} outside (0, 100]"
        )));
    }
    let values: Vec<f64> = section.data().iter().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let level = clip_level(&values, mean, percentile);
    Ok(values
        .iter()
        .map(|v| {
            if level > 0.0 {
                ((v - mean) / level).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

fn byte(unit: f64) -> u8 {
    (unit * 255.0).round() as u8
}

/// Renders a section as an image of `n_traces` columns by `n_samples` rows.
pub fn render_png(section: &SeismicSection, path: &Path, percentile: f64, cmap: Colormap) -> Result<()> {
    let s = scaled(section, percentile)?;
    let (rows, cols) = section.dim();
    let (w, h) = (cols as u32, rows as u32);
    let result = match cmap {
        Colormap::Gray => GrayImage::from_fn(w, h, |x, y| {
            Luma([byte((s[y as usize * cols + x as usize] + 1.0) / 2.0)])
        })
        .save_with_format(path, image::ImageFormat::Png),
        Colormap::Seismic => RgbImage::from_fn(w, h, |x, y| {
            let v = s[y as usize * cols + x as usize];
            let fade = byte(1.0 - v.abs());
            if v < 0.0 {
                Rgb([fade, fade, 255])
            } else {
                Rgb([255, fade, fade])
            }
        })
        .save_with_format(path, image::ImageFormat::Png),
    };
    result.map_err(|e| Error::Format(format!("png {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn section(data: Array2<f64>) -> SeismicSection {
        SeismicSection::from_time(data, 0.002).unwrap()
    }

    #[test]
    fn constant_grid_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        render_png(&section(Array2::from_elem((6, 9), 3.5)), &path, 99.0, Colormap::Gray).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (9, 6));
        assert!(img.pixels().all(|p| p.0[0] == 128));
    }

    #[test]
    fn dimensions_are_traces_by_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let data = Array2::from_shape_fn((20, 7), |(i, j)| (i as f64 - j as f64).sin());
        render_png(&section(data), &path, 99.0, Colormap::Seismic).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (7, 20));
    }

    #[test]
    fn extremes_saturate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.png");
        let data = ndarray::array![[-1.0, 0.0, 1.0]];
        render_png(&section(data), &path, 100.0, Colormap::Gray).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        let px: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
        assert_eq!(px, vec![0, 128, 255]);
    }

    #[test]
    fn bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        let data = Array2::from_shape_fn((30, 11), |(i, j)| ((i * j) as f64 * 0.1).cos());
        render_png(&section(data.clone()), &a, 99.0, Colormap::Gray).unwrap();
        render_png(&section(data), &b, 99.0, Colormap::Gray).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn percentile_levels() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(clip_level(&values, 0.0, 99.0), 99.0);
        assert_eq!(clip_level(&values, 0.0, 100.0), 100.0);
        assert_eq!(clip_level(&values, 0.0, 0.5), 1.0);
        assert!(render_png(&section(Array2::zeros((2, 2))), Path::new("x.png"), 0.0, Colormap::Gray).is_err());
    }
}
