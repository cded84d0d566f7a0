//! Standard normal distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

use crate::error::{Error, Result};

/// 1/sqrt(2*pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

// Wichura, AS 241 (PPND16).
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_61,
    28_729.085_735_721_942_674,
    5_226.495_278_852_854_561,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_77,
    0.022_723_844_989_269_184_583_3,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    0.689_767_334_985_100_004_55,
    0.148_103_976_427_480_074_59,
    0.015_198_666_563_616_457_196_6,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_23,
    0.026_532_189_526_576_123_093,
    0.001_242_660_947_388_078_438_6,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    0.014_875_361_290_850_614_852_5,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Inverse of [`std_normal_cdf`].
///
/// Rational approximation followed by one Halley step. The refinement works
/// on the tail probability `min(u, 1 - u)` so that upper-tail inputs keep
/// their precision.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires 0 < u < 1, got {u}"
        )));
    }
    let q = u - 0.5;
    let x = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        q * poly(&A, r) / poly(&B, r)
    } else {
        let tail = if q < 0.0 { u } else { 1.0 - u };
        let r = (-tail.ln()).sqrt();
        let v = if r <= 5.0 {
            let r = r - 1.6;
            poly(&C, r) / poly(&D, r)
        } else {
            let r = r - 5.0;
            poly(&E, r) / poly(&F, r)
        };
        if q < 0.0 {
            -v
        } else {
            v
        }
    };
    // Halley step on the lower tail of |x|.
    let (t, target) = if q <= 0.0 { (x, u) } else { (-x, 1.0 - u) };
    let err = std_normal_cdf(t) - target;
    let step = err * (2.0 * PI).sqrt() * (0.5 * t * t).exp();
    let t = t - step / (1.0 + 0.5 * t * step);
    Ok(if q <= 0.0 { t } else { -t })
}

/// Beyond this argument `phi(a)` underflows and the tail is zero.
const MILLS_MAX: f64 = 40.0;
const MILLS_STEP: f64 = 1.0 / 128.0;
/// Below this the ratio is taken from erfc directly; above, from the
/// continued fraction.
const MILLS_CF_FROM: f64 = 3.0;

/// Mills ratio by Laplace's continued fraction `1/(a + 1/(a + 2/(a + ...)))`,
/// evaluated backwards from `terms`.
fn mills_ratio_cf(a: f64, terms: usize) -> f64 {
    let mut t = a;
    for k in (1..=terms).rev() {
        t = a + k as f64 / t;
    }
    1.0 / t
}

struct MillsTable {
    r: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn mills_table() -> &'static MillsTable {
    static TABLE: std::sync::OnceLock<MillsTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = (MILLS_MAX / MILLS_STEP) as usize + 2;
        let mut t = MillsTable {
            r: Vec::with_capacity(n),
            d1: Vec::with_capacity(n),
            d2: Vec::with_capacity(n),
        };
        for i in 0..n {
            let a = i as f64 * MILLS_STEP;
            let r = if a < MILLS_CF_FROM {
                std_normal_cdf(-a) / std_normal_pdf(a)
            } else {
                mills_ratio_cf(a, 2000)
            };
            // R' = aR - 1, R'' = (1 + a^2) R - a
            t.r.push(r);
            t.d1.push(a * r - 1.0);
            t.d2.push((1.0 + a * a) * r - a);
        }
        t
    })
}

/// Mills ratio `R(a) = Phi(-a) / phi(a)` for `a >= 0`, from a quintic Hermite
/// table (relative error ~1e-16). Lets callers that already hold `phi(a)`
/// obtain the tail probability without another exponential.
pub fn mills_ratio(a: f64) -> f64 {
    debug_assert!(a >= 0.0);
    if a >= MILLS_MAX {
        return mills_ratio_cf(a, 40);
    }
    let tab = mills_table();
    let s = a / MILLS_STEP;
    let i = s as usize;
    let t = s - i as f64;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let h = MILLS_STEP;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    tab.r[i] * h0
        + h * tab.d1[i] * h1
        + h * h * tab.d2[i] * h2
        + h * h * tab.d2[i + 1] * h3
        + h * tab.d1[i + 1] * h4
        + tab.r[i + 1] * h5
}
