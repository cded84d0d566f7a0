//! Monte Carlo objective for the marginal parameters and its gradient.
//!
//! For completed rows `x^m_l` drawn under the current parameters,
//!
//! ```text
//! Q(theta) = (1/M) sum_l sum_m [ -1/2 z_theta^T (K - I) z_theta + sum_j ln f_j(x^m_lj) ]
//! ```
//!
//! Fully observed rows enter once with weight one instead of as `M` copies.
//! Observed cells of sampled rows are stored once and shared by the copies,
//! so every marginal is evaluated once per distinct cell.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::marginals::{MarginalSet, MixtureMarginal};
use crate::numkernel::{IndexPartition, SymMatrix};

/// Weighted completed rows with per-column cell sharing.
#[derive(Debug, Clone)]
pub struct CompletedSamples {
    p: usize,
    columns: Vec<Vec<f64>>,
    cells: Vec<u32>,
    weights: Vec<f64>,
}

impl CompletedSamples {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            columns: vec![Vec::new(); p],
            cells: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Every row as its own entry with the given weight.
    pub fn from_rows(rows: &[Vec<f64>], weight: f64) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let mut out = Self::new(p);
        for r in rows {
            out.push_complete(r, weight);
        }
        out
    }

    fn intern(&mut self, j: usize, v: f64) -> u32 {
        let col = &mut self.columns[j];
        col.push(v);
        u32::try_from(col.len() - 1).expect("cell count fits in u32")
    }

    /// A fully observed row.
    pub fn push_complete(&mut self, row: &[f64], weight: f64) {
        debug_assert_eq!(row.len(), self.p);
        for (j, &v) in row.iter().enumerate() {
            let id = self.intern(j, v);
            self.cells.push(id);
        }
        self.weights.push(weight);
    }

    /// One observation with its conditional draws of the missing cells;
    /// each draw gets weight `1 / draws.len()`.
    pub fn push_conditional(&mut self, part: &IndexPartition, x_obs: &[f64], draws: &[Vec<f64>]) {
        if draws.is_empty() {
            return;
        }
        let mut shared = vec![None; self.p];
        for (&j, &v) in part.obs().iter().zip(x_obs) {
            shared[j] = Some(self.intern(j, v));
        }
        let w = 1.0 / draws.len() as f64;
        for d in draws {
            let mut drawn = d.iter();
            for (j, cell) in shared.iter().enumerate() {
                let id = match cell {
                    Some(id) => *id,
                    None => {
                        let v = *drawn.next().expect("one draw per missing cell");
                        self.intern(j, v)
                    }
                };
                self.cells.push(id);
            }
            self.weights.push(w);
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_entries(&self) -> usize {
        self.weights.len()
    }

    /// Number of distinct stored cells.
    pub fn n_cells(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn entry(&self, e: usize) -> Vec<f64> {
        (0..self.p)
            .map(|j| self.columns[j][self.cells[e * self.p + j] as usize])
            .collect()
    }

    pub fn weight(&self, e: usize) -> f64 {
        self.weights[e]
    }

    /// All stored values of column `j` (shared cells once).
    pub fn column_cells(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }
}

struct ColumnEval {
    z: Vec<f64>,
    ln_pdf: Vec<f64>,
    dz_scale: Vec<f64>,
    dl_scale: Vec<f64>,
    /// `g` weights per cell, filled only when the gradient is requested.
    weights: Vec<f64>,
}

const CHUNK: usize = 2048;

impl ColumnEval {
    fn with_capacity(n: usize, n_weights: usize) -> Self {
        Self {
            z: Vec::with_capacity(n),
            ln_pdf: Vec::with_capacity(n),
            dz_scale: Vec::with_capacity(n),
            dl_scale: Vec::with_capacity(n),
            weights: Vec::with_capacity(n_weights),
        }
    }

    fn append(&mut self, other: ColumnEval) {
        self.z.extend(other.z);
        self.ln_pdf.extend(other.ln_pdf);
        self.dz_scale.extend(other.dz_scale);
        self.dl_scale.extend(other.dl_scale);
        self.weights.extend(other.weights);
    }
}

fn eval_chunk(m: &MixtureMarginal, values: &[f64], with_grad: bool) -> ColumnEval {
    let g = m.g();
    let mut out =
        ColumnEval::with_capacity(values.len(), if with_grad { values.len() * g } else { 0 });
    let mut scratch = vec![0.0; g];
    for &x in values {
        let c = if with_grad {
            let at = out.weights.len();
            out.weights.resize(at + g, 0.0);
            m.eval_weights(x, &mut out.weights[at..])
        } else {
            m.eval_weights(x, &mut scratch)
        };
        out.z.push(c.z);
        out.ln_pdf.push(c.ln_pdf);
        out.dz_scale.push(c.dz_scale);
        out.dl_scale.push(c.dl_scale);
    }
    out
}

fn eval_column(m: &MixtureMarginal, values: &[f64], with_grad: bool) -> ColumnEval {
    let parts: Vec<ColumnEval> = values
        .par_chunks(CHUNK)
        .map(|chunk| eval_chunk(m, chunk, with_grad))
        .collect();
    let n = values.len();
    let mut all = ColumnEval::with_capacity(n, if with_grad { n * m.g() } else { 0 });
    for part in parts {
        all.append(part);
    }
    all
}

fn check_shapes(theta: &MarginalSet, k_next: &SymMatrix, samples: &CompletedSamples) -> Result<()> {
    if theta.len() != samples.p() || k_next.dim() != samples.p() {
        return Err(Error::Config(format!(
            "dimension mismatch: {} marginals, {}x{} precision, {} sample columns",
            theta.len(),
            k_next.dim(),
            k_next.dim(),
            samples.p()
        )));
    }
    Ok(())
}

/// Objective value and, when requested, its gradient over all centers laid
/// out like [`MarginalSet::flat_centers`].
pub fn theta_objective_eval(
    theta: &MarginalSet,
    k_next: &SymMatrix,
    samples: &CompletedSamples,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_shapes(theta, k_next, samples)?;
    let p = samples.p();
    let cols: Vec<ColumnEval> = (0..p)
        .map(|j| eval_column(&theta[j], &samples.columns[j], with_grad))
        .collect();
    // A = K - I
    let mut a = k_next.clone();
    for i in 0..p {
        a.set(i, i, a.get(i, i) - 1.0);
    }
    let mut coef_z: Vec<Vec<f64>> = cols.iter().map(|c| vec![0.0; c.z.len()]).collect();
    let mut coef_l: Vec<Vec<f64>> = cols.iter().map(|c| vec![0.0; c.z.len()]).collect();
    let a = a.row_major();
    let mut z = vec![0.0; p];
    let mut az = vec![0.0; p];
    let mut value = 0.0;
    for (e, &w) in samples.weights.iter().enumerate() {
        let ids = &samples.cells[e * p..(e + 1) * p];
        let mut ln_sum = 0.0;
        for j in 0..p {
            let id = ids[j] as usize;
            z[j] = cols[j].z[id];
            ln_sum += cols[j].ln_pdf[id];
        }
        let mut quad = 0.0;
        for i in 0..p {
            let row = &a[i * p..(i + 1) * p];
            az[i] = row.iter().zip(&z).map(|(u, v)| u * v).sum();
            quad += az[i] * z[i];
        }
        value += w * (-0.5 * quad + ln_sum);
        if with_grad {
            for j in 0..p {
                let id = ids[j] as usize;
                coef_z[j][id] -= w * az[j];
                coef_l[j][id] += w;
            }
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is not finite ({value})"
        )));
    }
    if !with_grad {
        return Ok((value, None));
    }
    let mut grad = Vec::with_capacity(theta.n_params());
    for (j, col) in cols.iter().enumerate() {
        let m = &theta[j];
        let (g, sigma) = (m.g(), m.bandwidth());
        let mut gj = vec![0.0; g];
        for (id, &x) in samples.columns[j].iter().enumerate() {
            let a = coef_z[j][id] * col.dz_scale[id];
            let b = coef_l[j][id] * col.dl_scale[id];
            let w = &col.weights[id * g..(id + 1) * g];
            for ((gk, &wk), &c) in gj.iter_mut().zip(w).zip(m.centers()) {
                *gk += wk * (a + b * (x - c) / sigma);
            }
        }
        grad.extend(gj);
    }
    Ok((value, Some(grad)))
}

/// Monte Carlo objective for the marginal parameters.
pub fn theta_objective(
    theta: &MarginalSet,
    k_next: &SymMatrix,
    samples: &CompletedSamples,
) -> Result<f64> {
    Ok(theta_objective_eval(theta, k_next, samples, false)?.0)
}

/// Gradient of [`theta_objective`] over all centers.
pub fn theta_objective_grad(
    theta: &MarginalSet,
    k_next: &SymMatrix,
    samples: &CompletedSamples,
) -> Result<Vec<f64>> {
    Ok(theta_objective_eval(theta, k_next, samples, true)?
        .1
        .expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{CopulaModel, CorrelationMatrix};
    use crate::marginals::MixtureMarginal;

    fn theta() -> MarginalSet {
        MarginalSet::new(vec![
            MixtureMarginal::new(vec![-0.5, 0.4, 1.0], 0.8).unwrap(),
            MixtureMarginal::new(vec![0.0, 2.0], 1.1).unwrap(),
        ])
        .unwrap()
    }

    fn rows() -> Vec<Vec<f64>> {
        vec![
            vec![0.1, 0.5],
            vec![-1.2, 1.9],
            vec![2.2, 3.0],
            vec![0.7, -0.4],
        ]
    }

    #[test]
    fn identity_precision_gives_marginal_loglik() {
        let th = theta();
        let s = CompletedSamples::from_rows(&rows(), 1.0);
        let v = theta_objective(&th, &SymMatrix::identity(2), &s).unwrap();
        let expected: f64 = rows()
            .iter()
            .map(|r| th[0].ln_pdf(r[0]) + th[1].ln_pdf(r[1]))
            .sum();
        assert!((v - expected).abs() < 1e-12);
        let g = theta_objective_grad(&th, &SymMatrix::identity(2), &s).unwrap();
        let mut stacked = vec![0.0; 5];
        for r in rows() {
            for (k, d) in th[0].logpdf_grad(r[0]).into_iter().enumerate() {
                stacked[k] += d;
            }
            for (k, d) in th[1].logpdf_grad(r[1]).into_iter().enumerate() {
                stacked[3 + k] += d;
            }
        }
        for (a, b) in g.iter().zip(&stacked) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_data_matches_log_density() {
        // M = 1 and fully observed: objective + N/2 ln|Sigma| = sum of log densities.
        let th = theta();
        let sigma = CorrelationMatrix::bivariate(0.6).unwrap();
        let model = CopulaModel::new(sigma.clone(), th.clone()).unwrap();
        let s = CompletedSamples::from_rows(&rows(), 1.0);
        let v = theta_objective(&th, sigma.precision(), &s).unwrap();
        let total: f64 = rows().iter().map(|r| model.log_density(r)).sum();
        assert!((v - 0.5 * rows().len() as f64 * sigma.log_det() - total).abs() < 1e-10);
    }

    #[test]
    fn shifted_centers_lower_the_objective() {
        let th = theta();
        let k = CorrelationMatrix::bivariate(0.3)
            .unwrap()
            .precision()
            .clone();
        let s = CompletedSamples::from_rows(&rows(), 1.0);
        let base = theta_objective(&th, &k, &s).unwrap();
        let far: Vec<f64> = th.flat_centers().iter().map(|c| c + 25.0).collect();
        let shifted = th.with_flat_centers(&far).unwrap();
        assert!(theta_objective(&shifted, &k, &s).unwrap() < base);
    }

    #[test]
    fn conditional_rows_share_observed_cells() {
        let mut s = CompletedSamples::new(2);
        let part = IndexPartition::new(2, &[0]).unwrap();
        s.push_conditional(&part, &[0.3], &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        assert_eq!(s.n_entries(), 4);
        assert_eq!(s.column_cells(0), &[0.3]);
        assert_eq!(s.column_cells(1).len(), 4);
        assert_eq!(s.entry(2), vec![0.3, 3.0]);
        assert!((s.total_weight() - 1.0).abs() < 1e-15);
        // Equivalent to four weighted explicit rows.
        let explicit = CompletedSamples::from_rows(
            &[
                vec![0.3, 1.0],
                vec![0.3, 2.0],
                vec![0.3, 3.0],
                vec![0.3, 4.0],
            ],
            0.25,
        );
        let th = theta();
        let k = CorrelationMatrix::bivariate(-0.4)
            .unwrap()
            .precision()
            .clone();
        let a = theta_objective_eval(&th, &k, &s, true).unwrap();
        let b = theta_objective_eval(&th, &k, &explicit, true).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12);
        for (x, y) in a.1.unwrap().iter().zip(b.1.unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let th = theta();
        let k = CorrelationMatrix::bivariate(0.7)
            .unwrap()
            .precision()
            .clone();
        let s = CompletedSamples::from_rows(&rows(), 1.0);
        let g = theta_objective_grad(&th, &k, &s).unwrap();
        let flat = th.flat_centers();
        for i in 0..flat.len() {
            let h = 1e-6 * (1.0 + flat[i].abs());
            let eval = |d: f64| {
                let mut c = flat.clone();
                c[i] += d;
                // perturbation small enough to keep the order
                theta_objective(&th.with_flat_centers(&c).unwrap(), &k, &s).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-4),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
