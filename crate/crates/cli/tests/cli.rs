use std::process::{Command, Output};

use gaussmag_core::{analytic_variance, derive_couplings, PhysicalParams};

fn gaussmag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussmag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = gaussmag(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn derive_params_prints_default_couplings() {
    let s = stdout(&["derive-params"]);
    let value = |name: &str| -> f64 {
        let line = s.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((value("kappa_sq") / 1.83e6 - 1.0).abs() < 0.01);
    assert!((value("mu") / 8.79e4 - 1.0).abs() < 0.01);
    assert!((value("eta") / 1.7577 - 1.0).abs() < 0.001);
}

#[test]
fn noiseless_variance_ends_on_closed_form() {
    let rows = data_rows(&stdout(&["variance", "--no-decay"]));
    let last = rows.last().unwrap();
    assert_eq!(last[0], 1e-2);
    let c = derive_couplings(&PhysicalParams::default()).unwrap();
    let closed = analytic_variance(1e-12, c.kappa, c.mu, 1.0, 1e-2).sqrt() * 1e12;
    assert!((last[1] / closed - 1.0).abs() < 5e-3, "{} vs {closed}", last[1]);
    assert_eq!(rows.len(), 200);
}

#[test]
fn decay_is_on_by_default() {
    let args = ["variance", "--t-final", "1e-3", "--tau", "1e-7"];
    let rows = data_rows(&stdout(&args));
    assert!(rows.last().unwrap()[3] < 1.0);
    let mut off = args.to_vec();
    off.push("--no-decay");
    assert_eq!(data_rows(&stdout(&off)).last().unwrap()[3], 1.0);
}

#[test]
fn ensemble_output_is_reproducible() {
    let args = ["ensemble", "--n", "4", "--seed", "7"];
    let first = gaussmag(&args);
    let second = gaussmag(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let other_seed = gaussmag(&["ensemble", "--n", "4", "--seed", "8"]);
    assert_ne!(first.stdout, other_seed.stdout);
}

#[test]
fn config_file_and_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let csv = dir.path().join("run.csv");
    std::fs::write(&cfg, "# short run\nt_final = 1e-4\npoints = 5\nkappa_sq = 1.83e6\n").unwrap();
    let out = gaussmag(&[
        "variance",
        "--config",
        cfg.to_str().unwrap(),
        "--kappa-sq",
        "2e6",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let written = std::fs::read_to_string(&csv).unwrap();
    assert!(written.contains("# config: kappa_sq = 2e6\n"));
    assert!(written.contains("# config: t_final = 1e-4\n"));
    assert_eq!(data_rows(&written).len(), 5);
}

#[test]
fn bad_config_reports_line_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "atom_number = 1e12\nkappa_sq = 2e6\n").unwrap();
    let out = gaussmag(&["derive-params", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");

    std::fs::write(&cfg, "tau = fast\n").unwrap();
    let out = gaussmag(&["variance", "--config", cfg.to_str().unwrap()]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 1"));
    assert!(!out.status.success());
}

#[test]
fn invalid_run_settings_fail_cleanly() {
    let out = gaussmag(&["variance", "--tau", "1e-1", "--t-final", "1e-2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gaussmag(&["ensemble", "--n", "1", "--t-final", "1e-5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trajectory_reports_readout_and_truth() {
    let s = stdout(&["trajectory", "--t-final", "1e-4", "--sg-time", "1e-4", "--no-decay"]);
    assert!(s.contains("# stern-gerlach: t_s = 1e-4"));
    assert!(s.contains("\nt_s,B_mean_pT,deltaB_pT,B_true_pT\n"));
    let rows = data_rows(&s);
    let last = rows.last().unwrap();
    assert!((last[1] - last[3]).abs() < 5.0 * last[2]);
}
