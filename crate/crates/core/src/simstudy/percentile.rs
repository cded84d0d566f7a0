//! Percentile-function estimators and joint sampling through them.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::marginals::MixtureMarginal;
use crate::numkernel::std_normal_cdf;

/// Piecewise-linear percentile function of a sorted sample `y_1 <= ... <= y_N`
/// on the grid `i / (N + 1)`: `y_1` for `u <= 1/(N+1)`, `y_N` for
/// `u > N/(N+1)`, linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileFn {
    sorted: Vec<f64>,
}

impl PercentileFn {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config(
                "percentile function needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "percentile function needs finite values".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, u: f64) -> f64 {
        let y = &self.sorted;
        let n = y.len();
        let scale = (n + 1) as f64;
        if u <= 1.0 / scale {
            return y[0];
        }
        if u > n as f64 / scale {
            return y[n - 1];
        }
        // u in (i/(N+1), (i+1)/(N+1)] with 1 <= i <= N-1
        let t = u * scale;
        let i = ((t.ceil() as usize).saturating_sub(1)).clamp(1, n - 1);
        let frac = (u - i as f64 / scale) / ((i + 1) as f64 / scale - i as f64 / scale);
        frac * (y[i] - y[i - 1]) + y[i - 1]
    }
}

/// [`PercentileFn`] of an observed sample.
pub fn percentile_ecdf(observed: &[f64]) -> Result<PercentileFn> {
    PercentileFn::new(observed.to_vec())
}

/// Draws `n_prime` values from the equal-weight mixture and wraps them in a
/// [`PercentileFn`].
pub fn percentile_mixture<R: Rng + ?Sized>(
    m: &MixtureMarginal,
    n_prime: usize,
    rng: &mut R,
) -> Result<PercentileFn> {
    if n_prime == 0 {
        return Err(Error::Config("n_prime must be at least 1".into()));
    }
    let noise = Normal::new(0.0, m.bandwidth())
        .map_err(|e| Error::Config(format!("invalid bandwidth: {e}")))?;
    let values = (0..n_prime)
        .map(|_| {
            let k = rng.random_range(0..m.g());
            m.centers()[k] + noise.sample(rng)
        })
        .collect();
    PercentileFn::new(values)
}

/// `k` draws `(q1(Phi(z1)), q2(Phi(z2)))` with `z` bivariate standard normal
/// with correlation `rho`.
pub fn sample_joint<R, Q1, Q2>(
    rho: f64,
    q1: Q1,
    q2: Q2,
    k: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>>
where
    R: Rng + ?Sized,
    Q1: Fn(f64) -> f64,
    Q2: Fn(f64) -> f64,
{
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "correlation must lie in (-1, 1), got {rho}"
        )));
    }
    let c = (1.0 - rho * rho).sqrt();
    let lo = f64::MIN_POSITIVE;
    let hi = 1.0 - f64::EPSILON / 2.0;
    Ok((0..k)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let (z1, z2) = (a, rho * a + c * b);
            [
                q1(std_normal_cdf(z1).clamp(lo, hi)),
                q2(std_normal_cdf(z2).clamp(lo, hi)),
            ]
        })
        .collect())
}
