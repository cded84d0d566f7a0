use super::*;
use crate::numkernel::std_normal_quantile;

fn setting(rho: f64, beta: (f64, f64)) -> StudySetting {
    StudySetting {
        rho,
        beta0: beta.0,
        beta1: beta.1,
        ..StudySetting::default()
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn generated_data_has_the_target_law() {
    let s = StudySetting {
        n_rows: 4000,
        ..setting(0.5, (0.0, 2.0))
    };
    let d = generate_complete(&s, &mut stream(1, &[])).unwrap();
    let n = d.len() as f64;
    let z1: Vec<f64> = d.iter().map(|r| s.true_score(0, r[0]).unwrap()).collect();
    let z2: Vec<f64> = d.iter().map(|r| s.true_score(1, r[1]).unwrap()).collect();
    assert!((pearson(&z1, &z2) - 0.5).abs() < 4.0 / n.sqrt());
    let mean1 = d.iter().map(|r| r[0]).sum::<f64>() / n;
    assert!((mean1 - 6.0).abs() < 4.0 * (12.0 / n).sqrt());

    let s0 = StudySetting {
        n_rows: 4000,
        ..setting(0.0, (0.0, 2.0))
    };
    let d0 = generate_complete(&s0, &mut stream(2, &[])).unwrap();
    let a: Vec<f64> = d0.iter().map(|r| r[0]).collect();
    let b: Vec<f64> = d0.iter().map(|r| r[1]).collect();
    assert!(pearson(&a, &b).abs() < 4.0 / n.sqrt());
}

#[test]
fn removal_probability_examples() {
    let s = setting(0.5, (0.0, 2.0));
    let median1 = chi2_quantile(0.5, 6.0).unwrap();
    assert!((mar_probability(&s, median1).unwrap() - 0.5).abs() < 1e-9);
    let s = setting(0.5, (-1.0, 1.0));
    let x_at_z1 = chi2_quantile(crate::numkernel::std_normal_cdf(1.0), 6.0).unwrap();
    assert!((mar_probability(&s, x_at_z1).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn no_missingness_in_the_limit() {
    let s = StudySetting {
        p_mcar: 0.0,
        beta0: -800.0,
        beta1: 0.0,
        ..StudySetting::default()
    };
    let d = generate_complete(&s, &mut stream(3, &[])).unwrap();
    let data = apply_missingness(&d, &s, &mut stream(4, &[])).unwrap();
    assert_eq!(data.missing_cells(), 0);
}

#[test]
fn stage_two_rate_is_one_half_for_symmetric_mechanism() {
    let s = StudySetting {
        p_mcar: 0.0,
        n_rows: 20_000,
        ..setting(0.5, (0.0, 2.0))
    };
    let d = generate_complete(&s, &mut stream(5, &[])).unwrap();
    let data = apply_missingness(&d, &s, &mut stream(6, &[])).unwrap();
    let rate = data.missing_cells() as f64 / s.n_rows as f64;
    assert!((rate - 0.5).abs() < 4.0 / (s.n_rows as f64).sqrt());
    // only the second column is touched when p_mcar = 0
    assert_eq!(data.observed_count(0), s.n_rows);
}

#[test]
fn mcar_stage_only_affects_complete_rows_in_stage_two() {
    let s = StudySetting {
        p_mcar: 0.5,
        beta0: 50.0,
        beta1: 0.0,
        n_rows: 2000,
        ..StudySetting::default()
    };
    let d = generate_complete(&s, &mut stream(7, &[])).unwrap();
    let data = apply_missingness(&d, &s, &mut stream(8, &[])).unwrap();
    // stage two removes every surviving second cell, so column 2 is observed
    // only where column 1 was removed
    for l in 0..data.n_rows() {
        assert!(!(data.is_observed(l, 0) && data.is_observed(l, 1)));
    }
    let frac1 = data.observed_count(0) as f64 / 2000.0;
    assert!((frac1 - 0.5).abs() < 0.05);
}

#[test]
fn scope_and_gold_on_complete_data() {
    let s = StudySetting {
        p_mcar: 0.0,
        beta0: -800.0,
        beta1: 0.0,
        ..setting(0.5, (0.0, 0.0))
    };
    let d = generate_complete(&s, &mut stream(9, &[])).unwrap();
    let data = apply_missingness(&d, &s, &mut stream(10, &[])).unwrap();
    let n = d.len();

    let z: Vec<[f64; 2]> = d
        .iter()
        .map(|r| {
            [
                s.true_score(0, r[0]).unwrap(),
                s.true_score(1, r[1]).unwrap(),
            ]
        })
        .collect();
    let uncentered = |z: &[[f64; 2]]| {
        let (a, b, c) = z.iter().fold((0.0, 0.0, 0.0), |(a, b, c), r| {
            (a + r[0] * r[0], b + r[1] * r[1], c + r[0] * r[1])
        });
        c / (a.sqrt() * b.sqrt())
    };
    let gold = fit_gold(&data, &s, 1e-5, 100).unwrap();
    assert!((gold - uncentered(&z)).abs() < 1e-12);

    // normal scores of ranks
    let rank_scores = |col: usize| -> Vec<f64> {
        let mut v: Vec<f64> = d.iter().map(|r| r[col]).collect();
        v.sort_by(f64::total_cmp);
        d.iter()
            .map(|r| {
                let rank = v.iter().filter(|&&x| x <= r[col]).count();
                std_normal_quantile(rank as f64 / (n + 1) as f64).unwrap()
            })
            .collect()
    };
    let (a, b) = (rank_scores(0), rank_scores(1));
    let zr: Vec<[f64; 2]> = a.iter().zip(&b).map(|(&x, &y)| [x, y]).collect();
    let (scope, cols) = fit_scope(&data, 1e-5, 100).unwrap();
    assert!((scope - uncentered(&zr)).abs() < 1e-12);
    assert_eq!(cols[0].len(), n);
}

#[test]
fn joint_sample_marginals_follow_quantiles() {
    let mut rng = stream(11, &[]);
    let k = 10_000;
    let s = sample_joint(
        0.5,
        |u| chi2_quantile(u, 6.0).unwrap(),
        |u| chi2_quantile(u, 7.0).unwrap(),
        k,
        &mut rng,
    )
    .unwrap();
    let mut c1: Vec<f64> = s.iter().map(|r| r[0]).collect();
    c1.sort_by(f64::total_cmp);
    let d = ecdf_sup_error(&c1, |x| chi2_cdf(x, 6.0).unwrap());
    assert!(d < 0.02, "{d}");
}

#[test]
fn ks_extremes() {
    let mut rng = stream(12, &[]);
    let a = normal_pairs(0.3, 200, &mut rng);
    assert!(ks2d_two_sample(&a, &a).unwrap() <= 1.0 / 200.0 + 1e-15);
    let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 1000.0, p[1] + 1000.0]).collect();
    assert!(ks2d_two_sample(&a, &b).unwrap() >= 1.0 - 2.0 / 200.0);
    let c = normal_pairs(0.3, 150, &mut rng);
    assert_eq!(
        ks2d_two_sample(&a, &c).unwrap(),
        ks2d_two_sample(&c, &a).unwrap()
    );
}

#[test]
fn quartiles_interpolate() {
    let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
    assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    assert_eq!(median(&[1.0, 2.0]), 1.5);
    assert!(Quartiles::of(&[]).is_none());
}

#[test]
fn ecdf_sup_error_of_exact_grid() {
    // points at the uniform quantiles (i - 1/2)/n give error 1/(2n)
    let n = 10;
    let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let d = ecdf_sup_error(&pts, |x| x);
    assert!((d - 0.05).abs() < 1e-15);
}

fn tiny_setting(seed: u64) -> StudySetting {
    StudySetting {
        reps: 3,
        n_rows: 60,
        seed,
        k_joint: 400,
        n_prime: 500,
        ecm: EcmConfig {
            g: 5,
            n_small: 3,
            n_late: 1,
            n_max: 4,
            m_small: 5,
            m_large: 20,
            ..EcmConfig::default()
        },
        ..StudySetting::default()
    }
}

#[test]
fn study_is_deterministic() {
    let a = run_study(&tiny_setting(3)).unwrap();
    let b = run_study(&tiny_setting(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.reps.len() + a.failures.len(), 3);
    assert_eq!(a.to_csv().lines().count(), a.reps.len() + 1);
    for r in &a.reps {
        for v in [r.ks_em, r.ks_gold, r.ks_scope] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    let c = run_study(&tiny_setting(4)).unwrap();
    assert_ne!(a.reps, c.reps);
    let summary = a.summary();
    assert_eq!(summary["reps_completed"], a.reps.len());
}

#[test]
fn grid_has_four_settings() {
    let g = StudySetting::grid(&StudySetting::default());
    assert_eq!(g.len(), 4);
    assert!(g
        .iter()
        .any(|s| s.rho == 0.1 && s.beta0 == -1.0 && s.beta1 == 1.0));
    assert!(g
        .iter()
        .any(|s| s.rho == 0.5 && s.beta0 == 0.0 && s.beta1 == 2.0));
}
