use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{AxisUnit, SeismicSection};

/// Reads a numeric CSV as a section: one row per sample, one column per
/// trace. A first row that does not parse as numbers is taken as a header.
pub fn read_csv_grid(path: &Path, sample_interval: f64, axis_unit: AxisUnit) -> Result<SeismicSection> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => rows.push(values),
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(Error::Format(format!(
                    "{} line {}: {e}",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    let n = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || n == 0 {
        return Err(Error::Format(format!("{}: no numeric rows", path.display())));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Format(format!(
            "{}: row {} has {} columns, expected {n}",
            path.display(),
            bad + 1,
            rows[bad].len()
        )));
    }
    let m = rows.len();
    let data = Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect())
        .expect("rows checked");
    let mut section = SeismicSection::new(data, sample_interval, axis_unit)?;
    section.push_provenance(format!("csv-import: {}", path.display()));
    Ok(section)
}
