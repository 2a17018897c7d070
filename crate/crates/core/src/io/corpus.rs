use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "corpus directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no png or jpeg images in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

/// Loads an image as grayscale luminance in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0
    }))
}

pub fn load_image_corpus(dir: &Path) -> Result<Vec<Array2<f64>>> {
    list_images(dir)?.iter().map(|p| load_gray(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn loads_sorted_grayscale() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::from_fn(4, 3, |x, y| Luma([(x * 60 + y) as u8]))
            .save(dir.path().join("b.png"))
            .unwrap();
        RgbImage::from_pixel(5, 2, Rgb([255, 255, 255]))
            .save(dir.path().join("a.png"))
            .unwrap();
        fs::write(dir.path().join("notes.txt"), "skip").unwrap();
        let corpus = load_image_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].dim(), (2, 5));
        assert!(corpus[0].iter().all(|&v| v == 1.0));
        assert_eq!(corpus[1].dim(), (3, 4));
        assert_eq!(corpus[1][(2, 3)], 182.0 / 255.0);
    }

    #[test]
    fn missing_or_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_corpus(dir.path()).is_err());
        assert!(load_image_corpus(&dir.path().join("nope")).is_err());
    }
}
