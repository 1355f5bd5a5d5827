//! Dense linear-algebra and distribution kernels.

mod chisq;
mod eigen;
pub(crate) mod qr;

pub use chisq::{chisq_lower_tail, chisq_upper_tail, ln_gamma, regularized_gamma_p, regularized_gamma_q};
pub use eigen::{sym_eigen, SymEigen};
pub use qr::{ols_fit, LeastSquaresFit, PivotedQr, RANK_TOLERANCE};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A column-labelled dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if values.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} labels",
                values.ncols(),
                labels.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let col = pos / values.nrows().max(1);
            return Err(Error::NonFinite(format!("column `{}`", labels[col])));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidArgument(format!("duplicate column label `{l}`")));
            }
        }
        Ok(Self { values, labels })
    }

    /// Builds a design from labelled columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, nrows: usize) -> Result<Self> {
        let mut values = DMatrix::zeros(nrows, columns.len());
        let mut labels = Vec::with_capacity(columns.len());
        for (j, (label, col)) in columns.into_iter().enumerate() {
            if col.len() != nrows {
                return Err(Error::DimensionMismatch(format!(
                    "column `{label}` has {} rows, expected {nrows}",
                    col.len()
                )));
            }
            values.set_column(j, &DVector::from_vec(col));
            labels.push(label);
        }
        Self::new(values, labels)
    }

    /// An n x 0 design.
    pub fn empty(nrows: usize) -> Self {
        Self { values: DMatrix::zeros(nrows, 0), labels: Vec::new() }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Selects the given columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> DesignMatrix {
        let values = self.values.select_columns(cols);
        let labels = cols.iter().map(|&c| self.labels[c].clone()).collect();
        DesignMatrix { values, labels }
    }

    /// Horizontal concatenation; labels must stay distinct.
    pub fn hstack(&self, other: &DesignMatrix) -> Result<DesignMatrix> {
        if self.nrows() != other.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} rows with {} rows",
                self.nrows(),
                other.nrows()
            )));
        }
        let mut values = DMatrix::zeros(self.nrows(), self.ncols() + other.ncols());
        values.columns_mut(0, self.ncols()).copy_from(&self.values);
        values.columns_mut(self.ncols(), other.ncols()).copy_from(&other.values);
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        DesignMatrix::new(values, labels)
    }

    /// Prepends a column of ones labelled `(Intercept)`.
    pub fn with_intercept(&self) -> DesignMatrix {
        let n = self.nrows();
        let mut values = DMatrix::zeros(n, self.ncols() + 1);
        values.column_mut(0).fill(1.0);
        values.columns_mut(1, self.ncols()).copy_from(&self.values);
        let mut labels = Vec::with_capacity(self.ncols() + 1);
        labels.push(INTERCEPT_LABEL.to_string());
        labels.extend(self.labels.iter().cloned());
        DesignMatrix { values, labels }
    }
}

pub const INTERCEPT_LABEL: &str = "(Intercept)";

/// Builds `[1, columns...]` from a raw matrix without label bookkeeping.
pub(crate) fn intercept_design(columns: &DMatrix<f64>) -> DMatrix<f64> {
    let n = columns.nrows();
    let mut values = DMatrix::zeros(n, columns.ncols() + 1);
    values.column_mut(0).fill(1.0);
    values.columns_mut(1, columns.ncols()).copy_from(columns);
    values
}

/// Centered total sum of squares.
pub fn centered_tss(y: &DVector<f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.mean();
    y.iter().map(|v| (v - mean) * (v - mean)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_duplicate_labels() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 2.0, 3.0]);
        assert!(matches!(
            DesignMatrix::new(m, vec!["a".into(), "b".into()]),
            Err(Error::NonFinite(_))
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert!(DesignMatrix::new(m, vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn select_and_stack_keep_labels() {
        let d = DesignMatrix::from_columns(
            vec![("a".into(), vec![1.0, 2.0]), ("b".into(), vec![3.0, 4.0])],
            2,
        )
        .unwrap();
        let s = d.select(&[1]);
        assert_eq!(s.labels(), &["b".to_string()]);
        assert!(d.hstack(&s).is_err());
        let i = d.with_intercept();
        assert_eq!(i.labels()[0], INTERCEPT_LABEL);
        assert_eq!(i.values()[(1, 0)], 1.0);
    }
}
