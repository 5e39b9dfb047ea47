//! Units-by-indicators data matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n × J` matrix of unit profiles, stored row-major, with row and column identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    row_ids: Vec<String>,
    column_ids: Vec<String>,
    standardized: bool,
}

impl DataMatrix {
    /// Builds a matrix from row-major values. Rejects empty shapes, mismatched id
    /// lengths and non-finite entries.
    pub fn new(
        values: Vec<f64>,
        n_rows: usize,
        n_cols: usize,
        row_ids: Vec<String>,
        column_ids: Vec<String>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidInput(format!(
                "data must have at least one row and one column, got {n_rows}x{n_cols}"
            )));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {n_rows}x{n_cols} matrix, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        if row_ids.len() != n_rows || column_ids.len() != n_cols {
            return Err(Error::InvalidInput(format!(
                "id lengths ({}, {}) do not match shape {n_rows}x{n_cols}",
                row_ids.len(),
                column_ids.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(Self {
            values,
            n_rows,
            n_cols,
            row_ids,
            column_ids,
            standardized: false,
        })
    }

    /// Builds a matrix from rows with generated ids (`r1..`, `c1..`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(
            values,
            n_rows,
            n_cols,
            (1..=n_rows).map(|i| format!("r{i}")).collect(),
            (1..=n_cols).map(|j| format!("c{j}")).collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub(crate) fn mark_standardized(mut self) -> Self {
        self.standardized = true;
        self
    }

    /// Returns a copy with rows reordered so that output row `i` is input row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let values = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            values,
            n_rows: order.len(),
            n_cols: self.n_cols,
            row_ids: order.iter().map(|&i| self.row_ids[i].clone()).collect(),
            column_ids: self.column_ids.clone(),
            standardized: self.standardized,
        }
    }

    /// Column means and sample standard deviations (denominator `n − 1`; zero when `n = 1`).
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_rows as f64;
        let means: Vec<f64> = (0..self.n_cols).map(|j| self.column(j).sum::<f64>() / n).collect();
        let sds = (0..self.n_cols)
            .map(|j| {
                if self.n_rows < 2 {
                    return 0.0;
                }
                let ss: f64 = self.column(j).map(|v| (v - means[j]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect();
        (means, sds)
    }
}
