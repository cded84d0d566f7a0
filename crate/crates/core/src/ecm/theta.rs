//! Ascent on the Monte Carlo objective for the mixture centers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::objective::{theta_objective_eval, CompletedSamples};
use crate::error::Result;
use crate::marginals::MarginalSet;
use crate::numkernel::SymMatrix;

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;
/// Largest trial move of any center, in units of its bandwidth.
const MAX_MOVE: f64 = 2.0;

/// Settings of the inner optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaOptConfig {
    pub max_steps: usize,
    /// Stop once the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Number of curvature pairs kept by the quasi-Newton direction; 0 gives
    /// plain gradient ascent.
    pub memory: usize,
}

impl Default for ThetaOptConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            grad_tol: 1e-6,
            memory: 8,
        }
    }
}

/// Outcome of one marginal update.
#[derive(Debug, Clone)]
pub struct ThetaUpdate {
    pub marginals: MarginalSet,
    pub objective_start: f64,
    pub objective_end: f64,
    pub steps: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Two-loop recursion for the ascent direction `H g`.
fn quasi_newton_direction(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((rho, a));
    }
    if let Some((s, y)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y), (rho, a)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Maximizes the Monte Carlo objective over all centers, starting from
/// `theta_t`, with backtracking (Armijo) steps along quasi-Newton directions.
/// Every accepted step increases the objective; the returned centers are
/// sorted per coordinate.
pub fn theta_update(
    theta_t: &MarginalSet,
    k_next: &SymMatrix,
    samples: &CompletedSamples,
    opt: &ThetaOptConfig,
) -> Result<ThetaUpdate> {
    let scale: Vec<f64> = theta_t
        .iter()
        .flat_map(|m| std::iter::repeat_n(m.bandwidth(), m.g()))
        .collect();
    let eval = |x: &[f64], with_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        theta_objective_eval(
            &theta_t.with_flat_centers_unsorted(x)?,
            k_next,
            samples,
            with_grad,
        )
    };

    let mut x = theta_t.flat_centers();
    let (f0, g0) = eval(&x, true)?;
    let mut f = f0;
    let mut grad = g0.expect("gradient requested");
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut steps = 0;
    let mut converged = false;
    let mut warning = None;

    while steps < opt.max_steps {
        if inf_norm(&grad) < opt.grad_tol {
            converged = true;
            break;
        }
        let mut d = if opt.memory > 0 && !pairs.is_empty() {
            quasi_newton_direction(&grad, &pairs)
        } else {
            grad.clone()
        };
        let mut slope = dot(&grad, &d);
        if !(slope > 0.0 && slope.is_finite()) {
            pairs.clear();
            d = grad.clone();
            slope = dot(&grad, &d);
        }
        let reach = d
            .iter()
            .zip(&scale)
            .fold(0.0f64, |m, (di, si)| m.max(di.abs() / si));
        let mut t = if pairs.is_empty() {
            MAX_MOVE / reach
        } else {
            1.0
        };
        if t * reach > MAX_MOVE {
            t = MAX_MOVE / reach;
        }

        // The full step is usually accepted, so it is evaluated together
        // with its gradient; backtracked points get values only.
        let mut accepted = None;
        for attempt in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            if let Ok((ft, gt)) = eval(&trial, attempt == 0) {
                if ft >= f + ARMIJO_C * t * slope && ft > f {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= SHRINK;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if inf_norm(&grad) > opt.grad_tol {
                warning = Some(format!(
                    "line search failed after {steps} steps, gradient norm {:.3e}",
                    inf_norm(&grad)
                ));
            }
            break;
        };
        let g_new = match g_new {
            Some(g) => g,
            None => eval(&x_new, true)?.1.expect("gradient requested"),
        };
        steps += 1;

        if opt.memory > 0 {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            // curvature pair of the minimized function -f
            let y: Vec<f64> = grad.iter().zip(&g_new).map(|(a, b)| a - b).collect();
            if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                if pairs.len() == opt.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y));
            }
        }
        x = x_new;
        f = f_new;
        grad = g_new;
    }
    if !converged && warning.is_none() && steps == opt.max_steps {
        converged = inf_norm(&grad) < opt.grad_tol;
        if !converged {
            warning = Some(format!(
                "no convergence within {} steps, gradient norm {:.3e}",
                opt.max_steps,
                inf_norm(&grad)
            ));
        }
    }
    Ok(ThetaUpdate {
        marginals: theta_t.with_flat_centers(&x)?,
        objective_start: f0,
        objective_end: f,
        steps,
        converged,
        warning,
    })
}
