//! End-to-end exercises of the binary: exit codes, artifacts, determinism.

use std::fs;
use std::path::Path;
use std::process::Command;

fn afgauss() -> Command {
    Command::new(env!("CARGO_BIN_EXE_afgauss"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(&cfg, "{ this is not json");
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config parse"));
}

#[test]
fn missing_required_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"scan","grid":{{"n_rho":8,"n_theta":8,"rho_max":4.0}},
                "phi":[[0.0,0.0]],"output_dir":"{}"}}"#,
            dir.path().join("out").display()
        ),
    );
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_lambda_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"bounds","grid":{{"n_rho":8,"n_theta":8,"rho_max":4.0}},
                "lambda":1.5,"output_dir":"{}"}}"#,
            dir.path().join("out").display()
        ),
    );
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_zero_differential() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"solve","grid":{{"n_rho":16,"n_theta":16,"rho_max":5.0}},
                "phi":[],"output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("solve.json")).unwrap()).unwrap();
    assert_eq!(sidecar["converged"], serde_json::json!(true));
    assert_eq!(sidecar["iterations"], serde_json::json!(0));
    assert_eq!(sidecar["k_bound"], serde_json::json!(1.0));
    assert!(sidecar["config_hash"].as_str().unwrap().len() == 64);

    // all u values are exactly zero
    let csv = fs::read_to_string(out_dir.join("u.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let value = line.rsplit(',').next().unwrap();
        assert_eq!(value.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn bounds_probe_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"bounds","grid":{{"n_rho":16,"n_theta":16,"rho_max":5.0}},
                "lambda":0.5,"seed":11,"n_samples":3,"output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let run_once = || {
        let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        fs::read(out_dir.join("bounds.json")).unwrap()
    };
    let a = run_once();
    let b = run_once();
    assert_eq!(a, b, "identical config + seed must be bit-identical");
}

#[test]
fn seed_override_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"bounds","grid":{{"n_rho":16,"n_theta":16,"rho_max":5.0}},
                "lambda":0.5,"seed":11,"n_samples":2,"output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let run = |seed: &str| {
        let out = afgauss()
            .arg("--config")
            .arg(&cfg)
            .arg("--seed")
            .arg(seed)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("bounds.json")).unwrap()).unwrap();
        v["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(run("11"), run("12"));
}

#[test]
fn mesh_command_writes_obj_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"mesh","grid":{{"n_rho":8,"n_theta":8,"rho_max":3.0}},
                "phi":[[1.0,0.0]],"write_minkowski_csv":true,"output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let obj = fs::read_to_string(out_dir.join("surface.obj")).unwrap();
    assert!(obj.starts_with("# config_hash "));
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 8 * 8 + 1);
    assert_eq!(
        obj.lines().filter(|l| l.starts_with("f ")).count(),
        2 * 8 * (8 - 1) + 8
    );
    let csv = fs::read_to_string(out_dir.join("minkowski.csv")).unwrap();
    assert!(csv.starts_with("rho,theta,x0,x1,x2,x3"));
}

#[test]
fn scan_and_report_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let scan_cfg = dir.path().join("scan.json");
    write(
        &scan_cfg,
        &format!(
            r#"{{"command":"scan","grid":{{"n_rho":16,"n_theta":16,"rho_max":5.0}},
                "phi":[[0.8,0.0]],"phi1":[[-0.8,0.0]],"n_t":5,"output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let out = afgauss().arg("--config").arg(&scan_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("scan").join("t000_kappa.csv").exists());
    assert!(out_dir.join("scan").join("t004_u.csv").exists());

    let report_cfg = dir.path().join("report.json");
    write(
        &report_cfg,
        &format!(
            r#"{{"command":"report","output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let out = afgauss().arg("--config").arg(&report_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], serde_json::json!(true));
}

#[test]
fn unsolvable_differential_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        &format!(
            r#"{{"command":"solve","grid":{{"n_rho":16,"n_theta":16,"rho_max":5.0}},
                "phi":[[8.0,0.0]],
                "solver":{{"tolerance":1e-9,"max_iters":40,"method":null,"continuation_steps":4}},
                "output_dir":"{}"}}"#,
            out_dir.display()
        ),
    );
    let out = afgauss().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
