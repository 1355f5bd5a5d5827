use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::config::Roles;
use crate::engine::Dataset;
use crate::numerics::DesignMatrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing column `{0}` in the data header")]
    MissingColumn(String),
    #[error("no rows left after dropping {dropped} rows with missing values")]
    EmptyAfterDeletion { dropped: usize },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    ParseError { row: usize, column: String, value: String },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("{0}")]
    Invalid(String),
}

/// A dataset together with the listwise-deletion count.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Cell contents treated as missing.
fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "." | "null" | "NULL")
}

/// Reads a comma-separated file with a header row and assigns role columns.
///
/// Rows with a missing value in any role column are dropped. Cells that are
/// present but not numeric are errors, reported with 1-based data-row number.
pub fn load_dataset(path: &Path, roles: &Roles) -> Result<LoadedData, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_dataset(file, roles)
}

pub fn read_dataset<R: std::io::Read>(reader: R, roles: &Roles) -> Result<LoadedData, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> =
        rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    let wanted: Vec<&String> = roles.all().collect();
    let mut index = Vec::with_capacity(wanted.len());
    for name in &wanted {
        let pos = header.iter().position(|h| h == *name).ok_or_else(|| DataError::MissingColumn((*name).clone()))?;
        index.push(pos);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut dropped = 0;
    let mut row_values = vec![0.0; wanted.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let mut missing = false;
        for (k, &pos) in index.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("");
            if is_missing(cell) {
                missing = true;
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| DataError::ParseError {
                row: r + 1,
                column: wanted[k].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                missing = true;
                continue;
            }
            row_values[k] = value;
        }
        if missing {
            dropped += 1;
        } else {
            for (c, v) in columns.iter_mut().zip(&row_values) {
                c.push(*v);
            }
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let n = columns[0].len();
    if n == 0 {
        return Err(DataError::EmptyAfterDeletion { dropped });
    }

    let block = |names: &[String], offset: usize| -> Result<DesignMatrix, DataError> {
        let mut m = DMatrix::zeros(n, names.len());
        for j in 0..names.len() {
            m.set_column(j, &DVector::from_column_slice(&columns[offset + j]));
        }
        DesignMatrix::new(m, names.to_vec()).map_err(|e| DataError::Invalid(e.to_string()))
    };
    let (pw, px) = (roles.endogenous.len(), roles.covariates.len());
    let dataset = Dataset::new(
        roles.outcome.clone(),
        DVector::from_column_slice(&columns[0]),
        block(&roles.endogenous, 1)?,
        block(&roles.covariates, 1 + pw)?,
        block(&roles.instruments, 1 + pw + px)?,
    )
    .map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(LoadedData { dataset, dropped_rows: dropped })
}
