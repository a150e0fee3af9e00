use std::path::Path;
use std::process::{Command, Output};

fn dopcbf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dopcbf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v["report"].clone()
}

#[test]
fn negative_mass_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[acc]\nM = -1650.0\n").unwrap();
    let out = dopcbf(&["simulate", "--config", "bad.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("acc.M"), "{err}");
    assert!(!dir.path().join("o/trajectory.csv").exists());
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[filter]\nsigmaa = 1.0\n").unwrap();
    let out = dopcbf(&["simulate", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter"));
}

#[test]
fn unknown_controller_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dopcbf(&["simulate", "--controller", "mpc", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_outputs_and_flags_the_regular_cbf() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "[sim]\nt_end = 50.0\n").unwrap();

    let out = dopcbf(
        &["simulate", "--config", "short.toml", "--controller", "cbf", "--out", "cbf"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cbf = dir.path().join("cbf");
    for f in ["trajectory.csv", "report.json", "plot.svg"] {
        assert!(cbf.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(cbf.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,D,v,u,slack,theta,theta_hat,d_true,d_hat,h,h_de");
    assert_eq!(csv.lines().count(), 1 + 5001);
    assert!(std::fs::read_to_string(cbf.join("plot.svg")).unwrap().starts_with("<svg"));
    assert_eq!(report(&cbf)["violation"], true);

    let out = dopcbf(
        &["simulate", "--config", "short.toml", "--controller", "dopcbf", "--out", "dop"],
        dir.path(),
    );
    assert!(out.status.success());
    let rep = report(&dir.path().join("dop"));
    assert_eq!(rep["violation"], false);
    assert_eq!(rep["qp_failures"], 0);
}

#[test]
fn sweep_sigma_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "[sim]\nt_end = 30.0\n").unwrap();
    let out = dopcbf(
        &["sweep-sigma", "--config", "short.toml", "--sigmas", "0.5,2", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "sigma,min_h,min_hde,rms_du,status");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.5,") && lines[2].starts_with("2,"));
    assert!(dir.path().join("s/sweep.svg").exists());
}

#[test]
fn batch_writes_summary_and_per_run_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.toml"), "[sim]\nt_end = 20.0\n").unwrap();
    let out = dopcbf(
        &["batch", "--config", "short.toml", "--seed", "7", "--n", "3", "--out", "b"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 3);
    assert_eq!(summary["master_seed"], 7);
    let rows = std::fs::read_to_string(dir.path().join("b/per_run.csv")).unwrap();
    // One row per controller and road.
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
}
