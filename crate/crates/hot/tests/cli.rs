//! Integration tests for the `hot` binary: argument handling, JSON output,
//! exit codes, and artifact files.

use std::process::Command;

fn hot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hot"))
}

#[test]
fn distance_self_is_zeroish_and_json() {
    let out = hot()
        .args([
            "distance",
            "synth:classic:8x8:1",
            "synth:classic:8x8:1",
            "--tol",
            "1e-5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["distance"].as_f64().unwrap().abs() < 1e-2);
    assert_eq!(v["terminated_by"], "tolerance");
    assert!(v["iterations"].as_u64().unwrap() > 0);
}

#[test]
fn distance_dirac_pair_exact() {
    // mass moves one cell vertically: squared cost 1
    let out = hot()
        .args([
            "distance",
            "synth:dirac:4x4:0,0",
            "synth:dirac:4x4:1,0",
            "--tol",
            "1e-7",
            "--max-iters",
            "2000000",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn exit_code_1_on_bad_input() {
    let out = hot()
        .args(["distance", "synth:classic:8x8:1", "no_such_file.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_code_1_on_bad_config() {
    let out = hot()
        .args([
            "distance",
            "synth:classic:8x8:1",
            "synth:classic:8x8:2",
            "--rho",
            "2.5",
            "--mode",
            "admm",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_code_2_on_iteration_limit() {
    let out = hot()
        .args([
            "distance",
            "synth:classic:16x16:1",
            "synth:classic:16x16:2",
            "--tol",
            "1e-12",
            "--max-iters",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["terminated_by"], "max_iters");
}

#[test]
fn mismatched_dims_rejected() {
    let out = hot()
        .args(["distance", "synth:classic:8x8:1", "synth:classic:4x4:1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_writes_csv_with_consistent_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.csv");
    let out = hot()
        .args([
            "plan",
            "synth:classic:8x8:3",
            "synth:classic:8x8:4",
            "--tol",
            "1e-6",
        ])
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["entries"].as_u64().unwrap() > 0);
    assert!(v["row_marginal_resid"].as_f64().unwrap() < 1e-3);
    assert!(v["col_marginal_resid"].as_f64().unwrap() < 1e-3);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("src_i,src_j,dst_k,dst_l,mass"));
    let mass: f64 = lines
        .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-3, "plan mass {mass}");
}

#[test]
fn trace_file_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = hot()
        .args([
            "distance",
            "synth:classic:8x8:1",
            "synth:classic:8x8:2",
            "--tol",
            "1e-4",
        ])
        .arg("--trace")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iter,kkt_res,objective,elapsed_s"));
    assert!(text.lines().count() > 1);
}

#[test]
fn bench_runs_spec_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let outdir = dir.path().join("bench_out");
    let spec = serde_json::json!({
        "instances": ["classic"],
        "resolutions": [8],
        "modes": [{"mode": "halpern"}],
        "seeds": [1, 2],
        "tol": 1e-4,
        "max_iters": 100000,
        "output": outdir,
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_vec(&spec).unwrap()).unwrap();
    let out = hot().arg("bench").arg(&spec_path).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(outdir.join("records.csv").exists());
    assert!(outdir.join("report.json").exists());
}
