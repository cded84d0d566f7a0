//! Two-sample, two-dimensional Kolmogorov-Smirnov statistic of Fasano and
//! Franceschini.
//!
//! Every point of either sample anchors four quadrants
//! (`x > x0, y > y0`; `x <= x0, y > y0`; `x <= x0, y <= y0`; `x > x0, y <= y0`).
//! At each anchor the largest absolute difference between the two samples'
//! quadrant fractions is taken; the statistic is the mean of the maxima over
//! the anchors of each sample. An anchor is left out of its own sample's
//! counts; fractions use the full sample size.

use crate::error::{Error, Result};

struct Fenwick(Vec<u32>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..n`.
    fn prefix(&self, n: usize) -> u32 {
        let mut i = n;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn upper_bound(sorted: &[f64], v: f64) -> usize {
    sorted.partition_point(|&s| s <= v)
}

/// Quadrant counts of `sample` around every query point:
/// `[Q1, Q2, Q3, Q4]` with Q3 the lower-left closed quadrant.
fn quadrant_counts(sample: &[[f64; 2]], queries: &[[f64; 2]]) -> Vec<[u32; 4]> {
    let n = sample.len();
    let mut xs: Vec<f64> = sample.iter().map(|p| p[0]).collect();
    let mut ys: Vec<f64> = sample.iter().map(|p| p[1]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);

    let mut by_x: Vec<usize> = (0..n).collect();
    by_x.sort_by(|&a, &b| sample[a][0].total_cmp(&sample[b][0]));
    let mut q_order: Vec<usize> = (0..queries.len()).collect();
    q_order.sort_by(|&a, &b| queries[a][0].total_cmp(&queries[b][0]));

    let mut tree = Fenwick::new(n);
    let mut lower_left = vec![0u32; queries.len()];
    let mut next = 0;
    for &q in &q_order {
        let [qx, qy] = queries[q];
        while next < n && sample[by_x[next]][0] <= qx {
            // position among the sorted y values; ties share the last slot
            let rank = upper_bound(&ys, sample[by_x[next]][1]) - 1;
            tree.add(rank);
            next += 1;
        }
        lower_left[q] = tree.prefix(upper_bound(&ys, qy));
    }

    queries
        .iter()
        .zip(lower_left)
        .map(|(&[qx, qy], q3)| {
            let nx = upper_bound(&xs, qx) as u32;
            let ny = upper_bound(&ys, qy) as u32;
            let q2 = nx - q3;
            let q4 = ny - q3;
            let q1 = n as u32 + q3 - nx - ny;
            [q1, q2, q3, q4]
        })
        .collect()
}

fn max_difference(own: &[[u32; 4]], other: &[[u32; 4]], n_own: usize, n_other: usize) -> f64 {
    let (a, b) = (n_own as f64, n_other as f64);
    own.iter()
        .zip(other)
        .map(|(co, ct)| {
            let mut d: f64 = 0.0;
            for k in 0..4 {
                let c = if k == 2 { co[k] - 1 } else { co[k] };
                d = d.max((c as f64 / a - ct[k] as f64 / b).abs());
            }
            d
        })
        .fold(0.0, f64::max)
}

/// Fasano-Franceschini statistic in `[0, 1]`, `O((k1 + k2) log(k1 + k2))`.
pub fn ks2d_two_sample(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(
            "KS statistic needs two nonempty samples".into(),
        ));
    }
    if a.iter()
        .chain(b)
        .any(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(Error::Domain("KS statistic needs finite points".into()));
    }
    let d_a = max_difference(
        &quadrant_counts(a, a),
        &quadrant_counts(b, a),
        a.len(),
        b.len(),
    );
    let d_b = max_difference(
        &quadrant_counts(b, b),
        &quadrant_counts(a, b),
        b.len(),
        a.len(),
    );
    Ok(0.5 * (d_a + d_b))
}
