mod common;

use common::*;
use std::time::Instant;

#[test]
fn two_rep_study_runs_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study.csv");
    let start = Instant::now();
    run_ok(&[
        "study",
        "--reps",
        "2",
        "--seed",
        "4",
        "--output",
        path_str(&out),
    ]);
    let elapsed = start.elapsed();
    println!("two-rep study: {elapsed:?}");
    let csv = std::fs::read_to_string(&out).unwrap();
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("study.csv.summary.json")).unwrap(),
    )
    .unwrap();
    let failures = summary[0]["failures"].as_u64().unwrap() as usize;
    assert_eq!(csv.lines().count() - 1, 2 - failures);
    assert!(summary[0]["rho"]["em"]["median"].is_number());
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");
}
