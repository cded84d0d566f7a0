//! Chi-square distribution functions.

use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

fn check_df(df: f64) -> Result<()> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {df}"
        )));
    }
    Ok(())
}

/// `P(X <= x)` for `X ~ chi2(df)`.
pub fn chi2_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square cdf needs x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(0.5 * df, 0.5 * x))
}

/// `P(X > x)`, accurate in the upper tail.
pub fn chi2_sf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square survival needs x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(0.5 * df, 0.5 * x))
}

fn chi2_pdf(x: f64, df: f64) -> f64 {
    let k = 0.5 * df;
    ((k - 1.0) * x.ln()
        - 0.5 * x
        - k * std::f64::consts::LN_2
        - statrs::function::gamma::ln_gamma(k))
    .exp()
}

/// Inverse of [`chi2_cdf`]: safeguarded Newton iteration on a bracket.
pub fn chi2_quantile(u: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs 0 < u < 1, got {u}"
        )));
    }
    let upper = u > 0.5;
    // residual in the better-conditioned tail
    let resid = |x: f64| -> f64 {
        if upper {
            (1.0 - u) - gamma_ur(0.5 * df, 0.5 * x)
        } else {
            gamma_lr(0.5 * df, 0.5 * x) - u
        }
    };
    let (mut lo, mut hi) = (0.0, df.max(1.0));
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson-Hilferty start
    let z = crate::numkernel::std_normal_quantile(u)?;
    let c = 2.0 / (9.0 * df);
    let mut x = (df * (1.0 - c + z * c.sqrt()).powi(3)).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let r = resid(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(x, df);
        let mut next = x - r / d;
        if !(next > lo && next < hi) || !d.is_finite() || d == 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
