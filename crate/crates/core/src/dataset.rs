//! Real-valued data matrices with a missingness mask.

use crate::error::{Error, Result};
use crate::numkernel::IndexPartition;

/// `n_rows x p` matrix where each cell is either observed or missing.
#[derive(Debug, Clone)]
pub struct IncompleteDataset {
    n_rows: usize,
    p: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl PartialEq for IncompleteDataset {
    /// Equal shape, mask and observed values; missing cells carry no value.
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.p == other.p
            && self.observed == other.observed
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.observed)
                .all(|((a, b), &o)| !o || a.to_bits() == b.to_bits())
    }
}

impl IncompleteDataset {
    /// Rows of optional cells; `None` marks a missing value.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::Config(
                "dataset needs at least one row and column".into(),
            ));
        }
        let mut values = Vec::with_capacity(rows.len() * p);
        let mut observed = Vec::with_capacity(rows.len() * p);
        for (l, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Config(format!(
                    "row {l} has {} cells, expected {p}",
                    row.len()
                )));
            }
            for (j, cell) in row.iter().enumerate() {
                match *cell {
                    Some(v) if !v.is_finite() => {
                        return Err(Error::Ingest {
                            row: l,
                            column: j,
                            message: format!("non-finite value {v}"),
                        })
                    }
                    Some(v) => {
                        values.push(v);
                        observed.push(true);
                    }
                    None => {
                        values.push(f64::NAN);
                        observed.push(false);
                    }
                }
            }
        }
        Ok(Self {
            n_rows: rows.len(),
            p,
            values,
            observed,
        })
    }

    pub fn from_complete(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| Some(v)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, l: usize, j: usize) -> Option<f64> {
        let i = l * self.p + j;
        self.observed[i].then_some(self.values[i])
    }

    pub fn is_observed(&self, l: usize, j: usize) -> bool {
        self.observed[l * self.p + j]
    }

    /// Removes cell `(l, j)` from the observed set.
    pub fn mask_cell(&mut self, l: usize, j: usize) {
        let i = l * self.p + j;
        self.observed[i] = false;
        self.values[i] = f64::NAN;
    }

    pub fn row(&self, l: usize) -> Vec<Option<f64>> {
        (0..self.p).map(|j| self.get(l, j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n_rows).map(|l| self.row(l)).collect()
    }

    pub fn row_partition(&self, l: usize) -> IndexPartition {
        IndexPartition::from_mask(&self.observed[l * self.p..(l + 1) * self.p])
    }

    /// Observed values of row `l`, in column order.
    pub fn observed_values(&self, l: usize) -> Vec<f64> {
        (0..self.p).filter_map(|j| self.get(l, j)).collect()
    }

    /// Observed values of column `j`, in row order.
    pub fn column_observed(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|l| self.get(l, j)).collect()
    }

    pub fn observed_count(&self, j: usize) -> usize {
        (0..self.n_rows).filter(|&l| self.is_observed(l, j)).count()
    }

    pub fn missing_cells(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Applies `f(column, value)` to every observed cell.
    pub fn map_observed(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if self.observed[i] {
                *v = f(i % self.p, *v);
            }
        }
        out
    }
}
