use std::path::Path;

use spcyl::driver::{sweep, SWEEP_HEADER};

fn small(dir: &Path, name: &str, q: f64, extra: &str) {
    let text = format!(
        "q = {q}\ngrid.n_r = 48\ngrid.n_z = 96\ngrid.r_max = 8.0\ngrid.z_max = 16.0\n{extra}\n"
    );
    std::fs::write(dir.join(format!("{name}.toml")), text).unwrap();
}

#[test]
fn duplicate_configs_give_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path(), "a", 0.05, "");
    small(dir.path(), "b", 0.05, "");
    let out = dir.path().join("out");
    let o = sweep(dir.path(), &out, true).unwrap();
    assert_eq!(o.exit_code, 0);
    let text = std::fs::read_to_string(&o.csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
    assert!(out.join("a/summary.json").is_file() && out.join("b/summary.json").is_file());
}

#[test]
fn failing_run_keeps_partial_rows() {
    let dir = tempfile::tempdir().unwrap();
    small(dir.path(), "a_ok", 0.0, "");
    small(dir.path(), "b_capped", 0.05, "minimizer.max_iter = 2");
    std::fs::write(dir.path().join("c_broken.toml"), "q = \"high\"\n").unwrap();
    let o = sweep(dir.path(), &dir.path().join("out"), false).unwrap();
    assert_eq!(o.exit_code, 4);
    let codes: Vec<i32> = o.rows.iter().map(|r| r.exit_code).collect();
    assert_eq!(codes, vec![0, 4, 2]);
    let text = std::fs::read_to_string(&o.csv_path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("failed(4)") && text.contains("failed(2)"));
}

#[test]
fn small_q_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    for (name, q) in [("q0", 0.0), ("q1", 0.02), ("q2", 0.05)] {
        small(dir.path(), name, q, "");
    }
    let o = sweep(dir.path(), &dir.path().join("out"), true).unwrap();
    assert_eq!(o.exit_code, 0);
    let m: Vec<f64> = o.rows.iter().map(|r| r.m_q_upper.unwrap()).collect();
    assert!(m.windows(2).all(|w| w[1] >= w[0] - 2e-5), "{m:?}");
}
