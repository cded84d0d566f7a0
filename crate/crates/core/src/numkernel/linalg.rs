//! Small dense symmetric matrices, Cholesky factors and Gaussian conditioning.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance accepted by [`SymMatrix::from_rows`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Cholesky pivots at or below this value are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// A symmetric matrix in full row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Square, symmetric rows; asymmetry up to [`SYMMETRY_TOL`] is averaged out.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Config("matrix must have dimension >= 1".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("matrix rows must be square".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (rows[i][j] - rows[j][i]).abs() > SYMMETRY_TOL {
                    return Err(Error::Numerical(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    /// Builds from row-major storage of length `dim * dim`.
    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Config(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Self::from_rows(data.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entry `(i, j)` and its mirror.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    /// In-place `self += w * other`.
    pub fn add_scaled(&mut self, other: &SymMatrix, w: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += w * b;
        }
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            let ry: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
            acc += x[i] * ry;
        }
        acc
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim.max(1))
            .take(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Elementwise L1 distance.
    pub fn l1_distance(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
    min_pivot: f64,
}

impl Cholesky {
    /// Fails when a pivot does not exceed [`PIVOT_TOL`].
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let mut pivot = a.get(j, j);
            for k in 0..j {
                pivot -= l[j * n + k] * l[j * n + k];
            }
            if !(pivot > PIVOT_TOL) {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pivot {pivot:e} at {j})"
                )));
            }
            min_pivot = min_pivot.min(pivot);
            let d = pivot.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self {
            dim: n,
            l,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest pivot seen during factorization (squared diagonal of `L`).
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// `L x`.
    pub fn lower_mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[i * n + k] * x[k]).sum())
            .collect()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.l[i * self.dim + i].ln())
            .sum::<f64>()
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate().skip(j) {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

/// Split of the coordinates `0..p` into observed and missing indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexPartition {
    obs: Vec<usize>,
    mis: Vec<usize>,
    p: usize,
}

impl IndexPartition {
    /// `observed[j]` is true when coordinate `j` is observed.
    pub fn from_mask(observed: &[bool]) -> Self {
        let (obs, mis): (Vec<usize>, Vec<usize>) = (0..observed.len()).partition(|&j| observed[j]);
        Self {
            obs,
            mis,
            p: observed.len(),
        }
    }

    pub fn new(p: usize, obs: &[usize]) -> Result<Self> {
        let mut mask = vec![false; p];
        for &j in obs {
            if j >= p || mask[j] {
                return Err(Error::Config(format!(
                    "invalid observed index {j} for dimension {p}"
                )));
            }
            mask[j] = true;
        }
        Ok(Self::from_mask(&mask))
    }

    pub fn complete(p: usize) -> Self {
        Self::from_mask(&vec![true; p])
    }

    pub fn obs(&self) -> &[usize] {
        &self.obs
    }

    pub fn mis(&self) -> &[usize] {
        &self.mis
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_complete(&self) -> bool {
        self.mis.is_empty()
    }
}

/// Mean and covariance of `z_mis | z_obs` for `z ~ N(0, sigma)`.
pub fn schur_conditional(
    sigma: &SymMatrix,
    part: &IndexPartition,
    z_obs: &[f64],
) -> Result<(Vec<f64>, SymMatrix)> {
    if sigma.dim() != part.p() {
        return Err(Error::Config(format!(
            "partition dimension {} does not match matrix dimension {}",
            part.p(),
            sigma.dim()
        )));
    }
    if z_obs.len() != part.obs().len() {
        return Err(Error::Config(format!(
            "expected {} observed values, got {}",
            part.obs().len(),
            z_obs.len()
        )));
    }
    let (obs, mis) = (part.obs(), part.mis());
    if obs.is_empty() {
        return Ok((vec![0.0; mis.len()], sigma.principal(mis)));
    }
    let chol = sigma.principal(obs).cholesky()?;
    // Columns of Sigma_SS^{-1} Sigma_S,t for each missing t.
    let weights: Vec<Vec<f64>> = mis
        .iter()
        .map(|&t| {
            let col: Vec<f64> = obs.iter().map(|&s| sigma.get(s, t)).collect();
            chol.solve(&col)
        })
        .collect();
    let mu = weights
        .iter()
        .map(|w| w.iter().zip(z_obs).map(|(a, b)| a * b).sum())
        .collect();
    let sigma_prime = SymMatrix::from_fn(mis.len(), |a, b| {
        let reduction: f64 = obs
            .iter()
            .zip(&weights[b])
            .map(|(&s, w)| sigma.get(mis[a], s) * w)
            .sum();
        sigma.get(mis[a], mis[b]) - reduction
    });
    Ok((mu, sigma_prime))
}

/// Rescales `s` to unit diagonal: `P S P` with `P = diag(1/sqrt(S_jj))`.
pub fn correlation_normalize(s: &SymMatrix) -> Result<SymMatrix> {
    let scale: Vec<f64> = s
        .diag()
        .into_iter()
        .enumerate()
        .map(|(j, d)| {
            if d > 0.0 && d.is_finite() {
                Ok(d.sqrt())
            } else {
                Err(Error::Numerical(format!(
                    "cannot normalize: diagonal entry {j} is {d}"
                )))
            }
        })
        .collect::<Result<_>>()?;
    Ok(SymMatrix::from_fn(s.dim(), |i, j| {
        if i == j {
            1.0
        } else {
            s.get(i, j) / scale[i] / scale[j]
        }
    }))
}
