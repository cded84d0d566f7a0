//! Semiparametric marginals: equal-weight Gaussian mixtures with a shared
//! bandwidth,
//!
//! ```text
//! F(x) = (1/g) * sum_k Phi((x - theta_k) / sigma),   theta_1 <= ... <= theta_g.
//! ```

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{
    mills_ratio, std_normal_cdf, std_normal_pdf, std_normal_quantile, INV_SQRT_2PI,
};

/// Probabilities are clamped to `[CDF_CLAMP, 1 - CDF_CLAMP]` before the
/// normal quantile is applied.
pub const CDF_CLAMP: f64 = 1e-12;

/// Components further than this many bandwidths away contribute exactly 0 or 1.
const SATURATION: f64 = 40.0;

/// One coordinate's mixture marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMarginal {
    centers: Vec<f64>,
    bandwidth: f64,
}

/// Lower and upper tail probabilities, each computed without cancellation.
#[derive(Debug, Clone, Copy)]
struct Tails {
    lower: f64,
    upper: f64,
}

/// Values and center-gradients needed by the marginal update, for one point.
#[derive(Debug, Clone, Default)]
pub struct PointEval {
    /// Normal score `Phi^{-1}(F(x))` with clamping.
    pub z: f64,
    /// `ln f(x)`.
    pub ln_pdf: f64,
    /// `d z / d theta_k`; all zero when the probability was clamped.
    pub dz: Vec<f64>,
    /// `d ln f / d theta_k`.
    pub dln_pdf: Vec<f64>,
    scratch: Vec<f64>,
}

/// Per-point quantities of [`MixtureMarginal::eval_weights`]; with weights
/// `w_k`, `dz/dtheta_k = dz_scale * w_k` and
/// `d ln f/dtheta_k = dl_scale * w_k * u_k`, `u_k = (x - theta_k) / sigma`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellEval {
    pub z: f64,
    pub ln_pdf: f64,
    pub dz_scale: f64,
    pub dl_scale: f64,
}

impl MixtureMarginal {
    /// Centers are sorted on construction.
    pub fn new(mut centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("mixture center is not finite".into()));
        }
        centers.sort_by(f64::total_cmp);
        Ok(Self { centers, bandwidth })
    }

    /// Standard normal as a one-component mixture.
    pub fn standard_normal() -> Self {
        Self {
            centers: vec![0.0],
            bandwidth: 1.0,
        }
    }

    /// Number of components.
    pub fn g(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Same bandwidth, new centers (sorted).
    pub fn with_centers(&self, centers: Vec<f64>) -> Result<Self> {
        if centers.len() != self.g() {
            return Err(Error::Config(format!(
                "expected {} centers, got {}",
                self.g(),
                centers.len()
            )));
        }
        Self::new(centers, self.bandwidth)
    }

    fn tails(&self, x: f64) -> Tails {
        let (mut lower, mut upper) = (0.0, 0.0);
        for &c in &self.centers {
            accumulate_tails((x - c) / self.bandwidth, &mut lower, &mut upper);
        }
        let g = self.g() as f64;
        Tails {
            lower: lower / g,
            upper: upper / g,
        }
    }

    /// Mixture distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        self.tails(x).lower
    }

    /// `1 - F(x)` without cancellation.
    pub fn survival(&self, x: f64) -> f64 {
        self.tails(x).upper
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let s: f64 = self
            .centers
            .iter()
            .map(|&c| std_normal_pdf((x - c) / self.bandwidth))
            .sum();
        s / (self.g() as f64 * self.bandwidth)
    }

    /// `ln f(x)`, finite for every finite `x`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let half_sq = |c: f64| {
            let u = (x - c) / self.bandwidth;
            0.5 * u * u
        };
        let m = self
            .centers
            .iter()
            .map(|&c| half_sq(c))
            .fold(f64::INFINITY, f64::min);
        let s: f64 = self.centers.iter().map(|&c| (m - half_sq(c)).exp()).sum();
        s.ln() - m + INV_SQRT_2PI.ln() - (self.g() as f64 * self.bandwidth).ln()
    }

    /// Normal score of `x` with the clamped probability.
    pub fn gaussianize(&self, x: f64) -> f64 {
        score_from_tails(self.tails(x)).0
    }

    /// Gradient of [`Self::gaussianize`] with respect to each center.
    pub fn gaussianize_grad(&self, x: f64) -> Vec<f64> {
        let mut out = PointEval::default();
        self.eval_into(x, true, &mut out);
        out.dz
    }

    /// Gradient of [`Self::ln_pdf`] with respect to each center.
    pub fn logpdf_grad(&self, x: f64) -> Vec<f64> {
        let mut out = PointEval::default();
        self.eval_into(x, true, &mut out);
        out.dln_pdf
    }

    /// Score and log-density at `x`. `weights` (length `g`) receives
    /// `exp(m - u_k^2 / 2)` with `m = min_k u_k^2 / 2`, from which the center
    /// gradients follow via [`CellEval`].
    ///
    /// Each component needs a single exponential: its tail probability is
    /// recovered from its density through the Mills ratio.
    pub(crate) fn eval_weights(&self, x: f64, weights: &mut [f64]) -> CellEval {
        let sigma = self.bandwidth;
        let g = self.g() as f64;
        let mut m = f64::INFINITY;
        for (w, &c) in weights.iter_mut().zip(&self.centers) {
            let u = (x - c) / sigma;
            *w = 0.5 * u * u;
            m = m.min(*w);
        }
        let shift = INV_SQRT_2PI * (-m).exp();
        let (mut lower, mut upper) = (0.0, 0.0);
        let mut total = 0.0;
        for (w, &c) in weights.iter_mut().zip(&self.centers) {
            let u = (x - c) / sigma;
            *w = (m - *w).exp();
            total += *w;
            let tail = if u.abs() >= SATURATION {
                0.0
            } else {
                shift * *w * mills_ratio(u.abs())
            };
            if u < 0.0 {
                lower += tail;
                upper += 1.0 - tail;
            } else {
                lower += 1.0 - tail;
                upper += tail;
            }
        }
        let (z, clamped) = score_from_tails(Tails {
            lower: lower / g,
            upper: upper / g,
        });
        // dz/dtheta_k = -phi(u_k) / (g sigma phi(z))
        let dz_scale = if clamped {
            0.0
        } else {
            -(0.5 * z * z - m).exp() / (g * sigma)
        };
        CellEval {
            z,
            ln_pdf: total.ln() - m + INV_SQRT_2PI.ln() - (g * sigma).ln(),
            dz_scale,
            dl_scale: 1.0 / (total * sigma),
        }
    }

    /// Score, log-density and (optionally) their center gradients in one pass.
    pub fn eval_into(&self, x: f64, with_grad: bool, out: &mut PointEval) {
        out.scratch.resize(self.g(), 0.0);
        let cell = self.eval_weights(x, &mut out.scratch);
        out.z = cell.z;
        out.ln_pdf = cell.ln_pdf;
        out.dz.clear();
        out.dln_pdf.clear();
        if !with_grad {
            return;
        }
        for (&c, &w) in self.centers.iter().zip(&out.scratch) {
            let u = (x - c) / self.bandwidth;
            out.dln_pdf.push(cell.dl_scale * w * u);
            out.dz.push(cell.dz_scale * w);
        }
    }

    /// Inverse distribution function.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!(
                "mixture quantile requires 0 < u < 1, got {u}"
            )));
        }
        Ok(if u <= 0.5 {
            self.solve_tail(u, false, None)
        } else {
            self.solve_tail(1.0 - u, true, None)
        })
    }

    /// `F^{-1}(Phi(z))`, solved on whichever tail keeps precision.
    pub fn from_normal_score(&self, z: f64) -> f64 {
        self.from_normal_score_near(z, None)
    }

    fn from_normal_score_near(&self, z: f64, guess: Option<f64>) -> f64 {
        if z <= 0.0 {
            self.solve_tail(std_normal_cdf(z), false, guess)
        } else {
            self.solve_tail(std_normal_cdf(-z), true, guess)
        }
    }

    /// Solves `lower(x) = p` (or `upper(x) = p`) by safeguarded Newton.
    fn solve_tail(&self, p: f64, upper: bool, guess: Option<f64>) -> f64 {
        let sigma = self.bandwidth;
        let tail = |x: f64| {
            let t = self.tails(x);
            if upper {
                t.upper
            } else {
                t.lower
            }
        };
        // residual r(x) is increasing in x
        let resid = |x: f64| if upper { p - tail(x) } else { tail(x) - p };
        let first = self.centers[0];
        let last = self.centers[self.g() - 1];
        let mut lo = first - 12.0 * sigma;
        let mut hi = last + 12.0 * sigma;
        while resid(lo) > 0.0 {
            lo -= 12.0 * sigma;
        }
        while resid(hi) < 0.0 {
            hi += 12.0 * sigma;
        }
        let mut x = match guess {
            Some(v) if v > lo && v < hi => v,
            _ => {
                // Moment-matched normal as the starting point.
                let g = self.g() as f64;
                let mean = self.centers.iter().sum::<f64>() / g;
                let var = self.centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / g;
                let sd = (var + sigma * sigma).sqrt();
                let zq = std_normal_quantile(p.clamp(1e-300, 0.5)).unwrap_or(0.0);
                let v = if upper {
                    mean - sd * zq
                } else {
                    mean + sd * zq
                };
                v.clamp(lo, hi)
            }
        };
        for _ in 0..200 {
            let r = resid(x);
            if r == 0.0 {
                return x;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let f = self.pdf(x);
            let newton = x - r / f;
            let next = if f > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - x).abs();
            x = next;
            if step <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }

    /// Initial marginal fitted to the observed values of one column.
    ///
    /// Centers are the sample quantiles at levels `(k - 1/2)/g`; the
    /// bandwidth is Silverman's rule of thumb with `g` in place of the sample
    /// size, floored for degenerate samples.
    pub fn init_from_observed(observed: &[f64], g: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::Config("component count g must be >= 1".into()));
        }
        if observed.len() < g {
            return Err(Error::Config(format!(
                "need at least g = {g} observed values, got {}",
                observed.len()
            )));
        }
        if observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("observed values must be finite".into()));
        }
        let mut sorted = observed.to_vec();
        sorted.sort_by(f64::total_cmp);
        let centers = (1..=g)
            .map(|k| midpoint_quantile(&sorted, (k as f64 - 0.5) / g as f64))
            .collect();
        Self::new(centers, silverman_bandwidth(&sorted, g))
    }
}

#[inline]
fn accumulate_tails(u: f64, lower: &mut f64, upper: &mut f64) {
    if u <= -SATURATION {
        *upper += 1.0;
    } else if u >= SATURATION {
        *lower += 1.0;
    } else if u < 0.0 {
        let p = std_normal_cdf(u);
        *lower += p;
        *upper += 1.0 - p;
    } else {
        let q = std_normal_cdf(-u);
        *lower += 1.0 - q;
        *upper += q;
    }
}

/// `Phi^{-1}` of the clamped tail probability; flags whether clamping hit.
fn score_from_tails(t: Tails) -> (f64, bool) {
    if t.lower <= t.upper {
        let clamped = t.lower < CDF_CLAMP;
        let p = t.lower.max(CDF_CLAMP);
        (
            std_normal_quantile(p).expect("clamped probability"),
            clamped,
        )
    } else {
        let clamped = t.upper < CDF_CLAMP;
        let p = t.upper.max(CDF_CLAMP);
        (
            -std_normal_quantile(p).expect("clamped probability"),
            clamped,
        )
    }
}

/// Sample quantile with plotting positions `(i - 1/2)/n`, linear in between.
pub fn midpoint_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let h = n as f64 * u + 0.5;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let i = h.floor() as usize;
    let frac = h - i as f64;
    sorted[i - 1] + frac * (sorted[i] - sorted[i - 1])
}

/// `0.9 * min(sd, IQR / 1.34) * g^(-1/5)`, floored at `1e-6 * (1 + range)`.
pub fn silverman_bandwidth(sorted: &[f64], g: usize) -> f64 {
    let n = sorted.len();
    let range = sorted[n - 1] - sorted[0];
    let floor = 1e-6 * (1.0 + range.abs());
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let iqr = midpoint_quantile(sorted, 0.75) - midpoint_quantile(sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    (0.9 * spread * (g as f64).powf(-0.2)).max(floor)
}

/// Tabulated `z -> F^{-1}(Phi(z))` for repeated evaluation under fixed
/// parameters; each lookup is polished with one Newton step.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    marginal: MixtureMarginal,
    nodes: Vec<f64>,
    slopes: Vec<f64>,
}

const MAP_LIMIT: f64 = 8.0;
const MAP_STEP: f64 = 1.0 / 64.0;

impl ScoreMap {
    pub fn new(marginal: &MixtureMarginal) -> Self {
        let count = (2.0 * MAP_LIMIT / MAP_STEP).round() as usize + 1;
        let mut nodes = Vec::with_capacity(count);
        let mut slopes = Vec::with_capacity(count);
        let mut prev = None;
        for i in 0..count {
            let z = -MAP_LIMIT + i as f64 * MAP_STEP;
            let x = marginal.from_normal_score_near(z, prev);
            nodes.push(x);
            // dx/dz = phi(z) / f(x)
            slopes.push(std_normal_pdf(z) / marginal.pdf(x));
            prev = Some(x);
        }
        Self {
            marginal: marginal.clone(),
            nodes,
            slopes,
        }
    }

    pub fn marginal(&self) -> &MixtureMarginal {
        &self.marginal
    }

    pub fn map(&self, z: f64) -> f64 {
        if !(z > -MAP_LIMIT && z < MAP_LIMIT) {
            return self.marginal.from_normal_score(z);
        }
        let pos = (z + MAP_LIMIT) / MAP_STEP;
        let i = (pos.floor() as usize).min(self.nodes.len() - 2);
        let t = pos - i as f64;
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let (m0, m1) = (self.slopes[i] * MAP_STEP, self.slopes[i + 1] * MAP_STEP);
        let t2 = t * t;
        let t3 = t2 * t;
        let guess = (2.0 * t3 - 3.0 * t2 + 1.0) * x0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * x1
            + (t3 - t2) * m1;
        self.polish(z, guess, x0, x1)
    }

    /// Newton from `x` on the bracket `[lo, hi]`, bisecting whenever a step
    /// leaves it; the cdf can be nearly flat between distant centers.
    fn polish(&self, z: f64, mut x: f64, mut lo: f64, mut hi: f64) -> f64 {
        let m = &self.marginal;
        let target = std_normal_cdf(-z.abs());
        x = x.clamp(lo, hi);
        for _ in 0..100 {
            let t = m.tails(x);
            let r = if z <= 0.0 {
                t.lower - target
            } else {
                target - t.upper
            };
            if r == 0.0 {
                return x;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let f = m.pdf(x);
            let newton = x - r / f;
            let next = if f > 0.0 && newton >= lo && newton <= hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - x).abs();
            x = next;
            if step <= 1e-9 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

/// The marginals of all `p` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginalSet {
    marginals: Vec<MixtureMarginal>,
}

impl MarginalSet {
    pub fn new(marginals: Vec<MixtureMarginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Config("need at least one marginal".into()));
        }
        Ok(Self { marginals })
    }

    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MixtureMarginal> {
        self.marginals.iter()
    }

    pub fn as_slice(&self) -> &[MixtureMarginal] {
        &self.marginals
    }

    /// Total number of centers over all coordinates.
    pub fn n_params(&self) -> usize {
        self.marginals.iter().map(MixtureMarginal::g).sum()
    }

    /// Centers of every coordinate, concatenated.
    pub fn flat_centers(&self) -> Vec<f64> {
        self.marginals
            .iter()
            .flat_map(|m| m.centers().iter().copied())
            .collect()
    }

    /// Replaces all centers from a flat vector laid out like [`Self::flat_centers`].
    pub fn with_flat_centers(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::Config("center vector has the wrong length".into()));
        }
        let mut offset = 0;
        let marginals = self
            .marginals
            .iter()
            .map(|m| {
                let next = m.with_centers(flat[offset..offset + m.g()].to_vec());
                offset += m.g();
                next
            })
            .collect::<Result<_>>()?;
        Ok(Self { marginals })
    }

    /// Like [`Self::with_flat_centers`] but keeps the given order; for
    /// optimizers that need a stable parameter layout.
    pub(crate) fn with_flat_centers_unsorted(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::Config("center vector has the wrong length".into()));
        }
        if flat.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("mixture center is not finite".into()));
        }
        let mut offset = 0;
        let marginals = self
            .marginals
            .iter()
            .map(|m| {
                let centers = flat[offset..offset + m.g()].to_vec();
                offset += m.g();
                MixtureMarginal {
                    centers,
                    bandwidth: m.bandwidth,
                }
            })
            .collect();
        Ok(Self { marginals })
    }

    /// L1 distance between center vectors.
    pub fn l1_distance(&self, other: &MarginalSet) -> f64 {
        self.flat_centers()
            .iter()
            .zip(other.flat_centers())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn gaussianize(&self, x: &[f64]) -> Vec<f64> {
        self.marginals
            .iter()
            .zip(x)
            .map(|(m, &v)| m.gaussianize(v))
            .collect()
    }
}

impl Index<usize> for MarginalSet {
    type Output = MixtureMarginal;

    fn index(&self, j: usize) -> &MixtureMarginal {
        &self.marginals[j]
    }
}
