//! CSV input.

use std::path::Path;

use kplane_core::network::Dataset;
use kplane_core::Error;
use nalgebra::{DMatrix, DVector};

/// Numeric rows of a CSV with an optional header. The header is recognized
/// by a non-numeric first row. Line numbers in errors are 1-based file lines.
pub fn read_table(path: &Path) -> Result<Vec<Vec<f64>>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<Vec<Vec<f64>>, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(record.len());
                continue;
            }
            Err(_) => {
                let cell = record.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or_default();
                return Err(Error::Parse { line, message: format!("non-numeric cell {cell:?}") });
            }
        };
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse { line, message: format!("non-finite value {bad}") });
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse { line, message: format!("expected {w} columns, found {}", values.len()) })
            }
            _ => width = Some(values.len()),
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }
    Ok(rows)
}

/// `d` feature columns followed by one target column.
pub fn ingest_csv(path: &Path) -> Result<Dataset, Error> {
    dataset_from_rows(read_table(path)?)
}

pub fn dataset_from_rows(rows: Vec<Vec<f64>>) -> Result<Dataset, Error> {
    let cols = rows[0].len();
    if cols < 2 {
        return Err(Error::Parse { line: 1, message: "need at least one feature and one target column".into() });
    }
    let d = cols - 1;
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i][d]);
    Dataset::new(x, y)
}

/// Feature-only rows, as read by `predict`.
pub fn ingest_inputs(path: &Path) -> Result<DMatrix<f64>, Error> {
    let rows = read_table(path)?;
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}
