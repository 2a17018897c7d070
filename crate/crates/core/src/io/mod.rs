//! File formats, loaders, rendering and run configuration.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod csv_grid;
pub mod grid_file;
pub mod render;
pub mod report;

use std::path::Path;

use crate::error::Result;
use crate::grid::{AxisUnit, SeismicSection};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{RunConfig, CONFIG_ENV};
pub use grid_file::{read_grid, write_grid, Dtype};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputFormat {
    GridFile,
    /// Needs the sample interval and axis unit from the caller.
    Csv { sample_interval: f64, axis_unit: AxisUnit },
}

impl InputFormat {
    /// CSV for `.csv` paths, the grid format otherwise.
    pub fn guess(path: &Path, sample_interval: f64, axis_unit: AxisUnit) -> Self {
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            InputFormat::Csv {
                sample_interval,
                axis_unit,
            }
        } else {
            InputFormat::GridFile
        }
    }
}

pub fn load_seismic(path: &Path, format: InputFormat) -> Result<SeismicSection> {
    match format {
        InputFormat::GridFile => read_grid(path),
        InputFormat::Csv {
            sample_interval,
            axis_unit,
        } => csv_grid::read_csv_grid(path, sample_interval, axis_unit),
    }
}
