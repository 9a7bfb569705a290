//! Robust scaling: per-dimension `(x - median) / IQR`.
//!
//! Quartiles use linear interpolation between order statistics, pinned
//! here so models scale identically across runs and platforms. Dimensions
//! with zero IQR (constant in training) divide by 1 instead, so they still
//! contribute their raw deviation from the median.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScaleError {
    #[error("cannot fit a scaler on an empty matrix")]
    EmptyMatrix,
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("expected {expected} dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rows have inconsistent widths: {0} vs {1}")]
    RaggedMatrix(usize, usize),
    #[error("invalid scaler parameters: {0}")]
    InvalidParams(String),
}

/// Fitted robust-scaler parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
}

impl ScalerParams {
    /// Build from explicit vectors; lengths must match and IQRs must be
    /// finite and non-negative.
    pub fn new(median: Vec<f64>, iqr: Vec<f64>) -> Result<ScalerParams, ScaleError> {
        if median.len() != iqr.len() {
            return Err(ScaleError::InvalidParams(format!(
                "median has {} entries, iqr has {}",
                median.len(),
                iqr.len()
            )));
        }
        if median.iter().any(|v| !v.is_finite()) {
            return Err(ScaleError::InvalidParams("non-finite median".into()));
        }
        if iqr.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScaleError::InvalidParams(
                "iqr entries must be finite and >= 0".into(),
            ));
        }
        Ok(ScalerParams { median, iqr })
    }

    /// Identity scaler: median 0, IQR 1 in every dimension.
    pub fn identity(dims: usize) -> ScalerParams {
        ScalerParams {
            median: vec![0.0; dims],
            iqr: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.median.len()
    }

    /// Fit per-dimension median and `IQR = Q3 - Q1`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<ScalerParams, ScaleError> {
        if rows.is_empty() {
            return Err(ScaleError::EmptyMatrix);
        }
        let dims = rows[0].len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(ScaleError::RaggedMatrix(dims, row.len()));
            }
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ScaleError::NonFiniteInput { row: r, col: c });
                }
            }
        }
        let mut median = Vec::with_capacity(dims);
        let mut iqr = Vec::with_capacity(dims);
        let mut column = vec![0.0; rows.len()];
        for d in 0..dims {
            for (i, row) in rows.iter().enumerate() {
                column[i] = row[d];
            }
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            median.push(quantile_sorted(&column, 0.5));
            let q1 = quantile_sorted(&column, 0.25);
            let q3 = quantile_sorted(&column, 0.75);
            iqr.push(q3 - q1);
        }
        Ok(ScalerParams { median, iqr })
    }

    /// Scale one row. Zero-IQR dimensions are centered only.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, ScaleError> {
        if row.len() != self.dims() {
            return Err(ScaleError::DimensionMismatch {
                expected: self.dims(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.median.iter().zip(self.iqr.iter()))
            .map(|(x, (m, q))| {
                let divisor = if *q == 0.0 { 1.0 } else { *q };
                (x - m) / divisor
            })
            .collect())
    }

    pub fn transform_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ScaleError> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
    }
}
