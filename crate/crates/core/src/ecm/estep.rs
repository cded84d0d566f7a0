//! Closed-form E-step statistic and the correlation update.

use crate::copula::{CopulaModel, CorrelationMatrix};
use crate::dataset::IncompleteDataset;
use crate::error::{Error, Result};
use crate::numkernel::{correlation_normalize, schur_conditional, IndexPartition, SymMatrix};

/// Smallest Cholesky pivot accepted after normalization without repair.
pub const REPAIR_PIVOT: f64 = 1e-10;
const REPAIR_SHRINK: f64 = 0.999;
const REPAIR_MAX_ROUNDS: usize = 100;

/// `E[z z^T | z_obs]` for `z ~ N(0, sigma)`, in the original coordinate order.
pub fn conditional_second_moment(
    sigma: &SymMatrix,
    part: &IndexPartition,
    z_obs: &[f64],
) -> Result<SymMatrix> {
    let (mu, sigma_prime) = schur_conditional(sigma, part, z_obs)?;
    let p = part.p();
    let mut mean = vec![0.0; p];
    for (&j, &z) in part.obs().iter().zip(z_obs) {
        mean[j] = z;
    }
    for (&j, &m) in part.mis().iter().zip(&mu) {
        mean[j] = m;
    }
    let mut v = SymMatrix::from_fn(p, |i, j| mean[i] * mean[j]);
    let mis = part.mis();
    for a in 0..mis.len() {
        for b in a..mis.len() {
            let (i, j) = (mis[a], mis[b]);
            v.set(i, j, v.get(i, j) + sigma_prime.get(a, b));
        }
    }
    Ok(v)
}

/// The per-row matrix `V_l` under the current model.
pub fn e_step_v(model: &CopulaModel, part: &IndexPartition, x_obs: &[f64]) -> Result<SymMatrix> {
    if x_obs.len() != part.obs().len() {
        return Err(Error::Config(
            "observed values do not match the partition".into(),
        ));
    }
    let z_obs: Vec<f64> = part
        .obs()
        .iter()
        .zip(x_obs)
        .map(|(&j, &x)| model.marginals()[j].gaussianize(x))
        .collect();
    conditional_second_moment(model.sigma().matrix(), part, &z_obs)
}

/// Per-row `V_l` and their mean `S`.
#[derive(Debug, Clone)]
pub struct EStepStatistic {
    pub per_row: Vec<SymMatrix>,
    pub mean: SymMatrix,
}

impl EStepStatistic {
    pub fn from_rows(per_row: Vec<SymMatrix>) -> Result<Self> {
        let first = per_row
            .first()
            .ok_or_else(|| Error::Config("E-step needs at least one row".into()))?;
        let mut mean = SymMatrix::zeros(first.dim());
        let w = 1.0 / per_row.len() as f64;
        for v in &per_row {
            mean.add_scaled(v, w);
        }
        Ok(Self { per_row, mean })
    }

    /// E-step over a dataset on the original scale.
    pub fn compute(model: &CopulaModel, data: &IncompleteDataset) -> Result<Self> {
        let rows = (0..data.n_rows())
            .map(|l| e_step_v(model, &data.row_partition(l), &data.observed_values(l)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    /// E-step over data already on the normal-score scale.
    pub fn from_scores(sigma: &SymMatrix, scores: &IncompleteDataset) -> Result<Self> {
        let rows = (0..scores.n_rows())
            .map(|l| {
                conditional_second_moment(
                    sigma,
                    &scores.row_partition(l),
                    &scores.observed_values(l),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }
}

/// Result of the correlation update.
#[derive(Debug, Clone)]
pub struct SigmaUpdate {
    pub sigma: CorrelationMatrix,
    /// Number of shrink rounds applied to restore positive definiteness.
    pub repair_rounds: usize,
}

fn well_conditioned(m: &SymMatrix) -> bool {
    m.cholesky().is_ok_and(|c| c.min_pivot() >= REPAIR_PIVOT)
}

/// `P S P` with `P = diag(S_jj^{-1/2})`, shrinking off-diagonals if the
/// result is numerically singular.
pub fn sigma_update(stat: &EStepStatistic) -> Result<SigmaUpdate> {
    let mut c = correlation_normalize(&stat.mean)?;
    let mut rounds = 0;
    while !well_conditioned(&c) {
        if rounds == REPAIR_MAX_ROUNDS {
            return Err(Error::Numerical(
                "correlation update stayed singular after repair".into(),
            ));
        }
        let p = c.dim();
        for i in 0..p {
            for j in i + 1..p {
                c.set(i, j, c.get(i, j) * REPAIR_SHRINK);
            }
        }
        rounds += 1;
    }
    Ok(SigmaUpdate {
        sigma: CorrelationMatrix::new(c)?,
        repair_rounds: rounds,
    })
}

/// Result of the correlation-only EM loop.
#[derive(Debug, Clone)]
pub struct SigmaEmFit {
    pub sigma: CorrelationMatrix,
    pub iterations: usize,
    pub converged: bool,
}

/// EM for the correlation matrix of normal scores with fixed marginals,
/// iterated until the L1 change drops below `eps`.
pub fn run_sigma_em(scores: &IncompleteDataset, eps: f64, max_iter: usize) -> Result<SigmaEmFit> {
    let mut sigma = CorrelationMatrix::identity(scores.p());
    for it in 1..=max_iter {
        let stat = EStepStatistic::from_scores(sigma.matrix(), scores)?;
        let next = sigma_update(&stat)?.sigma;
        let change = next.matrix().l1_distance(sigma.matrix());
        sigma = next;
        if change < eps {
            return Ok(SigmaEmFit {
                sigma,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SigmaEmFit {
        sigma,
        iterations: max_iter,
        converged: false,
    })
}
