//! Acceptance criteria 1-8. Runs as a plain binary so that every criterion
//! prints one PASS/FAIL line. Pass criterion numbers as arguments to run a
//! subset.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use copula_em::ecm::{completed_samples, e_step_v, theta_objective, theta_objective_grad};
use copula_em::numkernel::{
    correlation_normalize, mvn_sample, stream, IndexPartition, Stream, SymMatrix,
};
use copula_em::simstudy::{ks2d_two_sample, run_study, StudyResult, StudySetting};
use copula_em::{CopulaModel, CorrelationMatrix, IncompleteDataset, MarginalSet, MixtureMarginal};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, budget_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(
        s < budget_s,
        format!("{detail}; {s:.1}s of {budget_s:.0}s budget"),
    )
}

fn random_correlation(p: usize, rng: &mut Stream) -> CorrelationMatrix {
    let a: Vec<f64> = (0..p * p).map(|_| rng.sample(StandardNormal)).collect();
    let s = SymMatrix::from_fn(p, |i, j| {
        (0..p).map(|k| a[i * p + k] * a[j * p + k]).sum::<f64>() + if i == j { 0.3 } else { 0.0 }
    });
    CorrelationMatrix::new(correlation_normalize(&s).unwrap()).unwrap()
}

fn random_marginal(rng: &mut Stream) -> MixtureMarginal {
    let g = rng.random_range(1..=5);
    let centers = (0..g).map(|_| rng.random_range(-3.0..3.0)).collect();
    MixtureMarginal::new(centers, rng.random_range(0.3..1.5)).unwrap()
}

fn random_model(p: usize, rng: &mut Stream) -> CopulaModel {
    let sigma = random_correlation(p, rng);
    let marginals = MarginalSet::new((0..p).map(|_| random_marginal(rng)).collect()).unwrap();
    CopulaModel::new(sigma, marginals).unwrap()
}

fn model_draw(model: &CopulaModel, rng: &mut Stream) -> Vec<f64> {
    let z = mvn_sample(&vec![0.0; model.p()], model.sigma().matrix(), 1, rng).unwrap();
    z[0].iter()
        .zip(model.marginals().iter())
        .map(|(&z, m)| m.from_normal_score(z))
        .collect()
}

fn random_partition(p: usize, min_missing: usize, rng: &mut Stream) -> IndexPartition {
    loop {
        let mask: Vec<bool> = (0..p).map(|_| rng.random_bool(0.5)).collect();
        if mask.iter().filter(|&&o| !o).count() >= min_missing {
            return IndexPartition::from_mask(&mask);
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let m = 200_000;
    let worst = (0..20u64)
        .into_par_iter()
        .map(|case| {
            let mut rng = stream(0xc1, &[case]);
            let p = rng.random_range(2..=3);
            let model = random_model(p, &mut rng);
            let x = model_draw(&model, &mut rng);
            let part = random_partition(p, 1, &mut rng);
            let x_obs: Vec<f64> = part.obs().iter().map(|&j| x[j]).collect();
            let v = e_step_v(&model, &part, &x_obs).unwrap();

            let law = model.conditional_law(&part, &x_obs).unwrap();
            let draws = model
                .sample_conditional_mapped(&law, &model.score_maps(), m, &mut rng)
                .unwrap();
            let mut full = x.clone();
            let mut acc = vec![0.0; p * p];
            for d in &draws {
                for (&j, &val) in part.mis().iter().zip(d) {
                    full[j] = val;
                }
                let z = model.marginals().gaussianize(&full);
                for i in 0..p {
                    for j in 0..p {
                        acc[i * p + j] += z[i] * z[j];
                    }
                }
            }
            (0..p * p)
                .map(|k| (acc[k] / m as f64 - v.row_major()[k]).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let detail = format!("20 models, max |V - MC| = {worst:.4} (< 0.02)");
    if worst >= 0.02 {
        return Err(detail);
    }
    within_budget(start.elapsed(), 120.0, detail)
}

/// Five-point central difference.
fn fd5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 1e-10 {
        diff / scale
    } else {
        diff
    }
}

fn shifted(m: &MixtureMarginal, k: usize, delta: f64) -> MixtureMarginal {
    let mut c = m.centers().to_vec();
    c[k] += delta;
    m.with_centers(c).unwrap()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst_obj: f64 = 0.0;
    let mut worst_marg: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = stream(0xc2, &[case]);
        let p = rng.random_range(2..=3);
        let truth = random_model(p, &mut rng);
        let rows: Vec<Vec<Option<f64>>> = (0..25)
            .map(|_| {
                model_draw(&truth, &mut rng)
                    .into_iter()
                    .map(|v| (!rng.random_bool(0.3)).then_some(v))
                    .collect()
            })
            .collect();
        let data = IncompleteDataset::from_rows(&rows).unwrap();
        let samples = completed_samples(&truth, &data, 4, case, 0).unwrap();
        let theta = random_model(p, &mut rng);
        let theta = MarginalSet::new(
            theta
                .marginals()
                .iter()
                .zip(truth.marginals().iter())
                .map(|(a, b)| {
                    let g = b.g();
                    let c = (0..g)
                        .map(|k| a.centers()[k % a.g()] + 0.1 * k as f64)
                        .collect();
                    MixtureMarginal::new(c, a.bandwidth()).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let k_next = random_correlation(p, &mut rng).precision().clone();

        let grad = theta_objective_grad(&theta, &k_next, &samples).unwrap();
        let flat = theta.flat_centers();
        let mut offsets = vec![0];
        for m in theta.iter() {
            offsets.push(offsets.last().unwrap() + m.g());
        }
        let numeric: Vec<f64> = (0..flat.len())
            .map(|i| {
                let j = offsets.iter().rposition(|&o| o <= i).unwrap();
                // Small enough that no stencil straddles the cdf clamp boundary.
                let h = 1e-4 * theta[j].bandwidth();
                fd5(
                    |c| {
                        let mut f = flat.clone();
                        f[i] = c;
                        theta_objective(&theta.with_flat_centers(&f).unwrap(), &k_next, &samples)
                            .unwrap()
                    },
                    flat[i],
                    h,
                )
            })
            .collect();
        worst_obj = worst_obj.max(relative_error(&grad, &numeric));

        for m in theta.iter() {
            let h = 1e-3 * m.bandwidth();
            for _ in 0..3 {
                let k0 = rng.random_range(0..m.g());
                let z: f64 = rng.sample(StandardNormal);
                let x = m.centers()[k0] + 1.5 * m.bandwidth() * z;
                let num_z: Vec<f64> = (0..m.g())
                    .map(|k| fd5(|d| shifted(m, k, d).gaussianize(x), 0.0, h))
                    .collect();
                let num_l: Vec<f64> = (0..m.g())
                    .map(|k| fd5(|d| shifted(m, k, d).ln_pdf(x), 0.0, h))
                    .collect();
                worst_marg = worst_marg
                    .max(relative_error(&m.gaussianize_grad(x), &num_z))
                    .max(relative_error(&m.logpdf_grad(x), &num_l));
            }
        }
    }
    let detail = format!(
        "100 instances, max relative error objective {worst_obj:.2e}, marginals {worst_marg:.2e} (< 1e-5)"
    );
    if worst_obj.max(worst_marg) >= 1e-5 {
        return Err(detail);
    }
    within_budget(start.elapsed(), 60.0, detail)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let m = 100_000;
    let tol = 5.0 / (m as f64).sqrt();
    let worst = (0..5u64)
        .into_par_iter()
        .map(|case| {
            let mut rng = stream(0xc3, &[case]);
            let p = rng.random_range(3..=4);
            let model = random_model(p, &mut rng);
            let x = model_draw(&model, &mut rng);
            let part = random_partition(p, 2, &mut rng);
            let x_obs: Vec<f64> = part.obs().iter().map(|&j| x[j]).collect();
            let law = model.conditional_law(&part, &x_obs).unwrap();
            let draws = model.sample_conditional(&law, m, &mut rng).unwrap();
            let mis = part.mis();
            let q = mis.len();
            let z: Vec<Vec<f64>> = draws
                .iter()
                .map(|d| {
                    d.iter()
                        .zip(mis)
                        .map(|(&v, &j)| model.marginals()[j].gaussianize(v))
                        .collect()
                })
                .collect();
            let mean: Vec<f64> = (0..q)
                .map(|a| z.iter().map(|r| r[a]).sum::<f64>() / m as f64)
                .collect();
            let mut dev: f64 = 0.0;
            for a in 0..q {
                dev = dev.max((mean[a] - law.mu[a]).abs());
                for b in 0..q {
                    let c = z
                        .iter()
                        .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                        .sum::<f64>()
                        / (m - 1) as f64;
                    dev = dev.max((c - law.sigma_prime.get(a, b)).abs());
                }
            }
            dev
        })
        .reduce(|| 0.0, f64::max);
    let detail = format!("5 models, max moment deviation {worst:.4} (< {tol:.4})");
    if worst >= tol {
        return Err(detail);
    }
    within_budget(start.elapsed(), 60.0, detail)
}

fn study() -> &'static [StudyResult] {
    static RESULTS: OnceLock<Vec<StudyResult>> = OnceLock::new();
    RESULTS.get_or_init(|| {
        StudySetting::grid(&StudySetting::default())
            .iter()
            .map(|s| {
                let t = Instant::now();
                let r = run_study(s).expect("study runs");
                println!(
                    "  study rho = {}, beta = ({}, {}): {} reps, {} failures, {:.0}s",
                    s.rho,
                    s.beta0,
                    s.beta1,
                    r.reps.len(),
                    r.failures.len(),
                    t.elapsed().as_secs_f64()
                );
                for (rep, msg) in &r.failures {
                    println!("    rep {rep} failed: {msg}");
                }
                r
            })
            .collect()
    })
}

fn label(r: &StudyResult) -> String {
    format!(
        "rho={} beta=({},{})",
        r.setting.rho, r.setting.beta0, r.setting.beta1
    )
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in study() {
        let em = r.median_of(|x| x.rho_em);
        let scope = r.median_of(|x| x.rho_scope);
        let pass = (em - r.setting.rho).abs() < 0.05 && (em - scope).abs() < 0.05;
        ok &= pass;
        parts.push(format!(
            "{}: em {em:.3} scope {scope:.3}{}",
            label(r),
            if pass { "" } else { " x" }
        ));
    }
    check(ok, parts.join("; "))
}

fn ks_medians(r: &StudyResult) -> (f64, f64, f64) {
    (
        r.median_of(|x| x.ks_scope),
        r.median_of(|x| x.ks_em),
        r.median_of(|x| x.ks_gold),
    )
}

fn criterion_5() -> Outcome {
    let results = study();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in results {
        let (scope, em, gold) = ks_medians(r);
        let mut pass = gold <= em;
        if r.setting.rho == 0.5 {
            pass &= em < scope;
        }
        ok &= pass;
        parts.push(format!(
            "{}: scope {scope:.4} em {em:.4} gold {gold:.4}{}",
            label(r),
            if pass { "" } else { " x" }
        ));
    }
    for high in results.iter().filter(|r| r.setting.rho == 0.5) {
        let low = results.iter().find(|r| {
            r.setting.rho == 0.1
                && r.setting.beta0 == high.setting.beta0
                && r.setting.beta1 == high.setting.beta1
        });
        if let Some(low) = low {
            let gap = |r: &StudyResult| {
                let (s, e, _) = ks_medians(r);
                s - e
            };
            let pass = gap(high) > gap(low);
            ok &= pass;
            parts.push(format!(
                "gap beta=({},{}): rho 0.5 {:.4} vs rho 0.1 {:.4}{}",
                high.setting.beta0,
                high.setting.beta1,
                gap(high),
                gap(low),
                if pass { "" } else { " x" }
            ));
        }
    }
    check(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let r = study()
        .iter()
        .find(|r| r.setting.rho == 0.5 && r.setting.beta0 == 0.0 && r.setting.beta1 == 2.0)
        .ok_or("setting rho=0.5 beta=(0,2) missing from the grid")?;
    let positive = r.reps.iter().filter(|x| x.ecdf2_signed_area > 0.0).count();
    let ecdf = r.median_of(|x| x.ecdf2_sup_error);
    let em = r.median_of(|x| x.em2_sup_error);
    check(
        positive >= 90 && em <= 0.5 * ecdf,
        format!(
            "positive signed area in {positive}/{} reps (>= 90); median sup error em {em:.4} vs ecdf {ecdf:.4} (ratio {:.2} <= 0.5)",
            r.setting.reps,
            em / ecdf
        ),
    )
}

fn brute_force_ks(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn side(own: &[[f64; 2]], other: &[[f64; 2]]) -> f64 {
        let quadrant = |p: [f64; 2], q: [f64; 2]| match (q[0] <= p[0], q[1] <= p[1]) {
            (false, false) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
        };
        let mut d: f64 = 0.0;
        for (i, &p) in own.iter().enumerate() {
            let mut co = [0u32; 4];
            let mut ct = [0u32; 4];
            for (k, &q) in own.iter().enumerate() {
                if k != i {
                    co[quadrant(p, q)] += 1;
                }
            }
            for &q in other {
                ct[quadrant(p, q)] += 1;
            }
            for k in 0..4 {
                d = d.max(
                    (co[k] as f64 / own.len() as f64 - ct[k] as f64 / other.len() as f64).abs(),
                );
            }
        }
        d
    }
    (side(a, b) + side(b, a)) / 2.0
}

fn criterion_7() -> Outcome {
    let mut mismatches = 0;
    for trial in 0..20u64 {
        let mut rng = stream(0xc7, &[trial]);
        let point = |rng: &mut Stream| {
            let v: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            // Every fourth trial rounds to a coarse grid to force ties.
            if trial % 4 == 3 {
                v.map(|x: f64| (x * 2.0).round() / 2.0)
            } else {
                v
            }
        };
        let a: Vec<[f64; 2]> = (0..50).map(|_| point(&mut rng)).collect();
        let b: Vec<[f64; 2]> = (0..50).map(|_| point(&mut rng)).collect();
        if ks2d_two_sample(&a, &b).unwrap().to_bits() != brute_force_ks(&a, &b).to_bits() {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("20 trials of 50 points, {mismatches} mismatches"),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("study-{workers}.csv"));
        let res = common::run(&[
            "study",
            "--batch",
            "--reps",
            "2",
            "--n-rows",
            "100",
            "--m-large",
            "100",
            "--k-joint",
            "2000",
            "--n-prime",
            "2000",
            "--seed",
            "8",
            "--workers",
            workers,
            "--output",
            common::path_str(&out),
        ]);
        if !res.status.success() {
            return Err(String::from_utf8_lossy(&res.stderr).into_owned());
        }
        let csv = std::fs::read(&out).map_err(|e| e.to_string())?;
        let summary = std::fs::read(dir.path().join(format!("study-{workers}.csv.summary.json")))
            .map_err(|e| e.to_string())?;
        outputs.push((csv, summary));
    }
    let rows = String::from_utf8_lossy(&outputs[0].0).lines().count() - 1;
    check(
        outputs[0] == outputs[1] && rows == 8,
        format!(
            "--workers 1 vs 4 on a 4-setting batch of {rows} rows: byte-identical = {}",
            outputs[0] == outputs[1]
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "E-step oracle equivalence", criterion_1),
        (2, "gradient suite", criterion_2),
        (3, "conditional sampler law", criterion_3),
        (4, "correlation medians", criterion_4),
        (5, "KS orderings", criterion_5),
        (6, "observed ecdf shift and EM marginal", criterion_6),
        (7, "KS brute-force oracle", criterion_7),
        (8, "worker-count determinism", criterion_8),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => Err(format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
