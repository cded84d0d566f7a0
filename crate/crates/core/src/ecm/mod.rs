//! Expectation conditional maximization for the copula model: closed-form
//! E-step, correlation update, and a Monte Carlo update of the marginals.

mod estep;
mod objective;
mod theta;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use estep::{
    conditional_second_moment, e_step_v, run_sigma_em, sigma_update, EStepStatistic, SigmaEmFit,
    SigmaUpdate, REPAIR_PIVOT,
};
pub use objective::{
    theta_objective, theta_objective_eval, theta_objective_grad, CompletedSamples,
};
pub use theta::{theta_update, ThetaOptConfig, ThetaUpdate};

use crate::copula::{CopulaModel, CorrelationMatrix};
use crate::dataset::IncompleteDataset;
use crate::error::{Error, Result};
use crate::marginals::{MarginalSet, MixtureMarginal};
use crate::numkernel::{stream, SymMatrix};

const SAMPLE_TAG: u64 = 0x5a4d_504c;

/// Driver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcmConfig {
    /// Mixture components per coordinate.
    pub g: usize,
    pub n_max: usize,
    pub eps_converged: f64,
    pub m_small: usize,
    pub m_large: usize,
    pub n_small: usize,
    pub n_late: usize,
    pub master_seed: u64,
    pub theta_opt: ThetaOptConfig,
}

impl Default for EcmConfig {
    fn default() -> Self {
        Self {
            g: 15,
            n_max: 25,
            eps_converged: 1e-5,
            m_small: 20,
            m_large: 1000,
            n_small: 20,
            n_late: 5,
            master_seed: 0,
            theta_opt: ThetaOptConfig::default(),
        }
    }
}

impl EcmConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("g", self.g),
            ("n_max", self.n_max),
            ("m_small", self.m_small),
            ("m_large", self.m_large),
            ("n_late", self.n_late),
            ("theta_opt.max_steps", self.theta_opt.max_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.eps_converged > 0.0 && self.eps_converged.is_finite()) {
            return Err(Error::Config("eps_converged must be positive".into()));
        }
        if !(self.theta_opt.grad_tol > 0.0) {
            return Err(Error::Config("theta_opt.grad_tol must be positive".into()));
        }
        Ok(())
    }

    /// Number of Monte Carlo draws per incomplete row at 1-based iteration `t`.
    pub fn draws_at(&self, t: usize) -> usize {
        if t <= self.n_small {
            self.m_small
        } else {
            self.m_large
        }
    }

    /// Iterations actually scheduled.
    pub fn scheduled_iterations(&self) -> usize {
        self.n_max.min(self.n_small + self.n_late)
    }
}

/// State after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcmIteration {
    pub iteration: usize,
    pub m: usize,
    pub sigma: SymMatrix,
    pub centers: Vec<f64>,
    /// `||Sigma^{t+1} - Sigma^t||_1 + ||theta^{t+1} - theta^t||_1`, both elementwise.
    pub eps: f64,
    pub sigma_change: f64,
    pub theta_change: f64,
    /// Monte Carlo objective at the new centers, if they were updated.
    pub objective: Option<f64>,
    pub theta_steps: usize,
    pub repair_rounds: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EcmTrace {
    pub iterations: Vec<EcmIteration>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl EcmTrace {
    pub fn last(&self) -> Option<&EcmIteration> {
        self.iterations.last()
    }

    /// One line per iteration; `sigma_i_j` columns hold the upper triangle.
    pub fn to_csv(&self) -> String {
        let p = self.iterations.first().map_or(0, |r| r.sigma.dim());
        let mut out =
            String::from("iteration,m,eps,sigma_change,theta_change,objective,theta_steps");
        for i in 0..p {
            for j in i + 1..p {
                let _ = write!(out, ",sigma_{}_{}", i + 1, j + 1);
            }
        }
        out.push('\n');
        for r in &self.iterations {
            let _ = write!(
                out,
                "{},{},{:e},{:e},{:e},{},{}",
                r.iteration,
                r.m,
                r.eps,
                r.sigma_change,
                r.theta_change,
                r.objective.map(|v| format!("{v:e}")).unwrap_or_default(),
                r.theta_steps
            );
            for i in 0..p {
                for j in i + 1..p {
                    let _ = write!(out, ",{:e}", r.sigma.get(i, j));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Starting marginals: sample quantiles as centers, rule-of-thumb bandwidth.
pub fn initial_marginals(data: &IncompleteDataset, g: usize) -> Result<MarginalSet> {
    let marginals = (0..data.p())
        .map(|j| {
            let mut col = data.column_observed(j);
            if col.len() < g {
                return Err(Error::Config(format!(
                    "column {} has {} observed values, fewer than g = {g}",
                    j + 1,
                    col.len()
                )));
            }
            col.sort_by(f64::total_cmp);
            MixtureMarginal::init_from_observed(&col, g)
        })
        .collect::<Result<_>>()?;
    MarginalSet::new(marginals)
}

/// Completed rows for the marginal update: complete rows once with weight 1,
/// incomplete rows as `m` conditional draws under `model`.
pub fn completed_samples(
    model: &CopulaModel,
    data: &IncompleteDataset,
    m: usize,
    seed: u64,
    iteration: usize,
) -> Result<CompletedSamples> {
    let maps = model.score_maps();
    let draws: Vec<Option<Vec<Vec<f64>>>> = (0..data.n_rows())
        .into_par_iter()
        .map(|l| {
            let part = data.row_partition(l);
            if part.is_complete() {
                return Ok(None);
            }
            let law = model.conditional_law(&part, &data.observed_values(l))?;
            let mut rng = stream(seed, &[SAMPLE_TAG, iteration as u64, l as u64]);
            model
                .sample_conditional_mapped(&law, &maps, m, &mut rng)
                .map(Some)
        })
        .collect::<Result<_>>()?;
    let mut samples = CompletedSamples::new(data.p());
    for (l, d) in draws.into_iter().enumerate() {
        let obs = data.observed_values(l);
        match d {
            None => samples.push_complete(&obs, 1.0),
            Some(d) => samples.push_conditional(&data.row_partition(l), &obs, &d),
        }
    }
    Ok(samples)
}

fn e_step(model: &CopulaModel, data: &IncompleteDataset) -> Result<EStepStatistic> {
    let rows = (0..data.n_rows())
        .into_par_iter()
        .map(|l| e_step_v(model, &data.row_partition(l), &data.observed_values(l)))
        .collect::<Result<Vec<_>>>()?;
    EStepStatistic::from_rows(rows)
}

/// Fits the copula model from the default start (identity correlation,
/// quantile-initialized marginals).
pub fn run_ecm(data: &IncompleteDataset, cfg: &EcmConfig) -> Result<(CopulaModel, EcmTrace)> {
    cfg.validate()?;
    let theta0 = initial_marginals(data, cfg.g)?;
    let start = CopulaModel::new(CorrelationMatrix::identity(data.p()), theta0)?;
    run_ecm_from(data, cfg, start, true)
}

/// Runs the iteration from `start`. With `update_marginals` false only the
/// correlation is updated and no sampling takes place.
pub fn run_ecm_from(
    data: &IncompleteDataset,
    cfg: &EcmConfig,
    start: CopulaModel,
    update_marginals: bool,
) -> Result<(CopulaModel, EcmTrace)> {
    cfg.validate()?;
    if start.p() != data.p() {
        return Err(Error::Config(format!(
            "model has dimension {}, data has {}",
            start.p(),
            data.p()
        )));
    }
    let mut model = start;
    let mut trace = EcmTrace::default();
    for t in 1..=cfg.scheduled_iterations() {
        let m = cfg.draws_at(t);
        let stat = e_step(&model, data)?;
        let update = sigma_update(&stat)?;
        if update.repair_rounds > 0 {
            trace.warnings.push(format!(
                "iteration {t}: correlation repaired in {} rounds",
                update.repair_rounds
            ));
        }
        let sigma_next = update.sigma;

        let (theta_next, objective, steps) = if update_marginals {
            let samples = completed_samples(&model, data, m, cfg.master_seed, t)?;
            let up = theta_update(
                model.marginals(),
                sigma_next.precision(),
                &samples,
                &cfg.theta_opt,
            )
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("iteration {t}: {msg}")),
                other => other,
            })?;
            if let Some(w) = &up.warning {
                trace.warnings.push(format!("iteration {t}: {w}"));
            }
            if !up.objective_end.is_finite() {
                return Err(Error::Numerical(format!(
                    "iteration {t}: objective is not finite"
                )));
            }
            (up.marginals, Some(up.objective_end), up.steps)
        } else {
            (model.marginals().clone(), None, 0)
        };

        let sigma_change = sigma_next.matrix().l1_distance(model.sigma().matrix());
        let theta_change = theta_next.l1_distance(model.marginals());
        trace.iterations.push(EcmIteration {
            iteration: t,
            m,
            sigma: sigma_next.matrix().clone(),
            centers: theta_next.flat_centers(),
            eps: sigma_change + theta_change,
            sigma_change,
            theta_change,
            objective,
            theta_steps: steps,
            repair_rounds: update.repair_rounds,
        });
        model = CopulaModel::new(sigma_next, theta_next)?;
        let late = !update_marginals || t > cfg.n_small;
        if late && sigma_change < cfg.eps_converged {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}
