//! Simulation study: chi-square marginals joined by a Gaussian copula, a
//! two-stage MCAR + MAR missingness mechanism, and a comparison of the
//! copula EM fit with an observed-ecdf baseline (SCOPE) and a known-marginals
//! gold standard.

mod chi2;
mod ks;
mod percentile;

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chi2::{chi2_cdf, chi2_quantile, chi2_sf};
pub use ks::ks2d_two_sample;
pub use percentile::{percentile_ecdf, percentile_mixture, sample_joint, PercentileFn};

use crate::dataset::IncompleteDataset;
use crate::ecm::{run_ecm, run_sigma_em, EcmConfig};
use crate::error::{Error, Result};
use crate::marginals::{MixtureMarginal, CDF_CLAMP};
use crate::numkernel::{derive_seed, std_normal_quantile, stream};

const TAG_DATA: u64 = 1;
const TAG_MASK: u64 = 2;
const TAG_ECM: u64 = 3;
const TAG_PERCENTILE: u64 = 4;
const TAG_JOINT: u64 = 5;

/// One study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySetting {
    pub rho: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub p_mcar: f64,
    pub n_rows: usize,
    pub marginal_dfs: (f64, f64),
    pub reps: usize,
    pub seed: u64,
    /// Draws per method for the KS comparison.
    pub k_joint: usize,
    /// Mixture draws behind each EM percentile function.
    pub n_prime: usize,
    /// Stopping threshold of the correlation-only EM used by SCOPE and gold.
    pub sigma_eps: f64,
    pub sigma_max_iter: usize,
    pub ecm: EcmConfig,
}

impl Default for StudySetting {
    fn default() -> Self {
        Self {
            rho: 0.5,
            beta0: 0.0,
            beta1: 2.0,
            p_mcar: 0.1,
            n_rows: 200,
            marginal_dfs: (6.0, 7.0),
            reps: 100,
            seed: 0,
            k_joint: 10_000,
            n_prime: 10_000,
            sigma_eps: 1e-5,
            sigma_max_iter: 10_000,
            ecm: EcmConfig::default(),
        }
    }
}

impl StudySetting {
    /// The four settings `rho in {0.1, 0.5}` x `beta in {(-1, 1), (0, 2)}`.
    pub fn grid(base: &StudySetting) -> Vec<StudySetting> {
        let mut out = Vec::with_capacity(4);
        for rho in [0.1, 0.5] {
            for (beta0, beta1) in [(-1.0, 1.0), (0.0, 2.0)] {
                out.push(StudySetting {
                    rho,
                    beta0,
                    beta1,
                    ..base.clone()
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if !(0.0..1.0).contains(&self.p_mcar) {
            return Err(Error::Config(format!(
                "p_mcar must lie in [0, 1), got {}",
                self.p_mcar
            )));
        }
        if !(self.beta0.is_finite() && self.beta1.is_finite()) {
            return Err(Error::Config("beta must be finite".into()));
        }
        if self.n_rows < 2 || self.k_joint == 0 || self.n_prime == 0 {
            return Err(Error::Config(
                "n_rows >= 2, k_joint >= 1 and n_prime >= 1 required".into(),
            ));
        }
        if !(self.marginal_dfs.0 > 0.0 && self.marginal_dfs.1 > 0.0) {
            return Err(Error::Config("degrees of freedom must be positive".into()));
        }
        self.ecm.validate()
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, &[rep as u64])
    }

    fn dfs(&self) -> [f64; 2] {
        [self.marginal_dfs.0, self.marginal_dfs.1]
    }

    /// Normal score of `x` under the true marginal of column `j`.
    pub fn true_score(&self, j: usize, x: f64) -> Result<f64> {
        let u = chi2_cdf(x, self.dfs()[j])?.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
        std_normal_quantile(u)
    }
}

/// `N` complete rows with true chi-square marginals and copula correlation `rho`.
pub fn generate_complete<R: Rng + ?Sized>(
    setting: &StudySetting,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>> {
    let [d1, d2] = setting.dfs();
    sample_joint(
        setting.rho,
        |u| chi2_quantile(u, d1).expect("u in (0, 1)"),
        |u| chi2_quantile(u, d2).expect("u in (0, 1)"),
        setting.n_rows,
        rng,
    )
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Removal probability of the second cell given the first.
pub fn mar_probability(setting: &StudySetting, x1: f64) -> Result<f64> {
    Ok(logistic(
        setting.beta0 + setting.beta1 * setting.true_score(0, x1)?,
    ))
}

/// Stage 1 removes each cell with probability `p_mcar`; stage 2 removes the
/// second cell of rows that are still complete with the logistic probability.
/// Each row consumes exactly three uniforms.
pub fn apply_missingness<R: Rng + ?Sized>(
    d: &[[f64; 2]],
    setting: &StudySetting,
    rng: &mut R,
) -> Result<IncompleteDataset> {
    let mut rows = Vec::with_capacity(d.len());
    for r in d {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let keep1 = u1 >= setting.p_mcar;
        let mut keep2 = u2 >= setting.p_mcar;
        if keep1 && keep2 && u3 < mar_probability(setting, r[0])? {
            keep2 = false;
        }
        rows.push(vec![keep1.then_some(r[0]), keep2.then_some(r[1])]);
    }
    IncompleteDataset::from_rows(&rows)
}

/// Observed-ecdf baseline: each column mapped to normal scores by
/// `rank / (N_obs + 1)`, then the correlation-only EM.
pub fn fit_scope(
    data: &IncompleteDataset,
    eps: f64,
    max_iter: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut columns = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let mut col = data.column_observed(j);
        if col.len() < 2 {
            return Err(Error::Config(format!(
                "column {} has fewer than 2 observations",
                j + 1
            )));
        }
        col.sort_by(f64::total_cmp);
        columns.push(col);
    }
    let mut scores = data.clone();
    let mut failure = None;
    scores = scores.map_observed(|j, x| {
        let col = &columns[j];
        let rank = col.partition_point(|&v| v <= x);
        let u = rank as f64 / (col.len() + 1) as f64;
        std_normal_quantile(u).unwrap_or_else(|e| {
            failure = Some(e);
            0.0
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let fit = run_sigma_em(&scores, eps, max_iter)?;
    Ok((fit.sigma.get(0, 1), columns))
}

/// Correlation-only EM on scores computed with the true marginals.
pub fn fit_gold(
    data: &IncompleteDataset,
    setting: &StudySetting,
    eps: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut failure = None;
    let scores = data.map_observed(|j, x| {
        setting.true_score(j, x).unwrap_or_else(|e| {
            failure = Some(e);
            0.0
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(run_sigma_em(&scores, eps, max_iter)?.sigma.get(0, 1))
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    pub rho_scope: f64,
    pub rho_em: f64,
    pub rho_gold: f64,
    pub ks_scope: f64,
    pub ks_em: f64,
    pub ks_gold: f64,
    /// `integral (F_obs - F_true) dx` for column 2; positive when the observed
    /// ecdf lies to the left of the truth.
    pub ecdf2_signed_area: f64,
    /// `sup |F_obs - F_true|` for column 2.
    pub ecdf2_sup_error: f64,
    /// `sup |F_em - F_true|` for column 2.
    pub em2_sup_error: f64,
    pub em_iterations: usize,
    pub observed_fraction2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub setting: StudySetting,
    pub reps: Vec<RepResult>,
    pub failures: Vec<(usize, String)>,
}

/// Median and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    /// Linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    Quartiles::of(values).map_or(f64::NAN, |q| q.median)
}

impl StudyResult {
    pub fn column(&self, f: impl Fn(&RepResult) -> f64) -> Vec<f64> {
        self.reps.iter().map(f).collect()
    }

    pub fn median_of(&self, f: impl Fn(&RepResult) -> f64) -> f64 {
        median(&self.column(f))
    }

    pub const CSV_HEADER: &'static str =
        "rep,seed,rho_scope,rho_em,rho_gold,ks_scope,ks_em,ks_gold,\
ecdf2_signed_area,ecdf2_sup_error,em2_sup_error,em_iterations,observed_fraction2";

    /// One line per successful repetition.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.reps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.rep,
                r.seed,
                r.rho_scope,
                r.rho_em,
                r.rho_gold,
                r.ks_scope,
                r.ks_em,
                r.ks_gold,
                r.ecdf2_signed_area,
                r.ecdf2_sup_error,
                r.em2_sup_error,
                r.em_iterations,
                r.observed_fraction2
            );
        }
        out
    }

    /// Per-method quartiles plus setting and failure metadata.
    pub fn summary(&self) -> serde_json::Value {
        let q = |f: fn(&RepResult) -> f64| Quartiles::of(&self.column(f));
        serde_json::json!({
            "setting": self.setting,
            "reps_requested": self.setting.reps,
            "reps_completed": self.reps.len(),
            "failures": self.failures.len(),
            "failure_messages": self.failures,
            "rho": {
                "scope": q(|r| r.rho_scope),
                "em": q(|r| r.rho_em),
                "gold": q(|r| r.rho_gold),
            },
            "ks": {
                "scope": q(|r| r.ks_scope),
                "em": q(|r| r.ks_em),
                "gold": q(|r| r.ks_gold),
            },
            "column2": {
                "ecdf_signed_area": q(|r| r.ecdf2_signed_area),
                "ecdf_sup_error": q(|r| r.ecdf2_sup_error),
                "em_sup_error": q(|r| r.em2_sup_error),
            },
        })
    }
}

/// `sup |F_n - F|` of an ecdf against a continuous cdf.
pub fn ecdf_sup_error(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |m, (i, &x)| {
        let f = cdf(x);
        m.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// `sup |F_mix - F|` over a fine grid covering the bulk of `F`.
pub fn mixture_sup_error(m: &MixtureMarginal, df: f64) -> Result<f64> {
    let hi = chi2_quantile(1.0 - 1e-9, df)?;
    let n = 4000;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let x = hi * i as f64 / n as f64;
        worst = worst.max((m.cdf(x) - chi2_cdf(x, df)?).abs());
    }
    Ok(worst)
}

/// Runs one repetition with its own seed.
pub fn run_rep(setting: &StudySetting, rep: usize) -> Result<RepResult> {
    let seed = setting.rep_seed(rep);
    let [d1, d2] = setting.dfs();
    let complete = generate_complete(setting, &mut stream(seed, &[TAG_DATA]))?;
    let data = apply_missingness(&complete, setting, &mut stream(seed, &[TAG_MASK]))?;

    let (rho_scope, observed) = fit_scope(&data, setting.sigma_eps, setting.sigma_max_iter)?;
    let rho_gold = fit_gold(&data, setting, setting.sigma_eps, setting.sigma_max_iter)?;
    let ecm_cfg = EcmConfig {
        master_seed: derive_seed(seed, &[TAG_ECM]),
        ..setting.ecm.clone()
    };
    let (model, trace) = run_ecm(&data, &ecm_cfg)?;
    let rho_em = model.sigma().get(0, 1);

    let mut prng = stream(seed, &[TAG_PERCENTILE]);
    let em_q1 = percentile_mixture(&model.marginals()[0], setting.n_prime, &mut prng)?;
    let em_q2 = percentile_mixture(&model.marginals()[1], setting.n_prime, &mut prng)?;
    let scope_q1 = PercentileFn::new(observed[0].clone())?;
    let scope_q2 = PercentileFn::new(observed[1].clone())?;
    let true_q1 = |u: f64| chi2_quantile(u, d1).expect("u in (0, 1)");
    let true_q2 = |u: f64| chi2_quantile(u, d2).expect("u in (0, 1)");

    let k = setting.k_joint;
    let joint = |method: u64| stream(seed, &[TAG_JOINT, method]);
    let truth = sample_joint(setting.rho, true_q1, true_q2, k, &mut joint(0))?;
    let s_scope = sample_joint(
        rho_scope,
        |u| scope_q1.eval(u),
        |u| scope_q2.eval(u),
        k,
        &mut joint(1),
    )?;
    let s_em = sample_joint(
        rho_em,
        |u| em_q1.eval(u),
        |u| em_q2.eval(u),
        k,
        &mut joint(2),
    )?;
    let s_gold = sample_joint(rho_gold, true_q1, true_q2, k, &mut joint(3))?;

    let obs2 = &observed[1];
    let mean2 = obs2.iter().sum::<f64>() / obs2.len() as f64;
    Ok(RepResult {
        rep,
        seed,
        rho_scope,
        rho_em,
        rho_gold,
        ks_scope: ks2d_two_sample(&truth, &s_scope)?,
        ks_em: ks2d_two_sample(&truth, &s_em)?,
        ks_gold: ks2d_two_sample(&truth, &s_gold)?,
        // integral of (F_n - F) equals E_F[X] - mean of the sample
        ecdf2_signed_area: d2 - mean2,
        ecdf2_sup_error: ecdf_sup_error(obs2, |x| chi2_cdf(x, d2).unwrap_or(0.0)),
        em2_sup_error: mixture_sup_error(&model.marginals()[1], d2)?,
        em_iterations: trace.iterations.len(),
        observed_fraction2: obs2.len() as f64 / data.n_rows() as f64,
    })
}

/// All repetitions of one setting; failed repetitions are skipped and listed.
pub fn run_study(setting: &StudySetting) -> Result<StudyResult> {
    setting.validate()?;
    let outcomes: Vec<Result<RepResult>> = (0..setting.reps)
        .into_par_iter()
        .map(|rep| run_rep(setting, rep))
        .collect();
    let mut reps = Vec::with_capacity(setting.reps);
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reps.push(r),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    Ok(StudyResult {
        setting: setting.clone(),
        reps,
        failures,
    })
}

/// Bivariate standard normal rows with correlation `rho`.
pub fn normal_pairs<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let c = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [a, rho * a + c * b]
        })
        .collect()
}

#[cfg(test)]
mod tests;
