//! Black-box tests of the `psd` binary: exit codes, file outputs, and
//! determinism contracts.

use std::path::Path;
use std::process::{Command, Output};

fn psd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Reduced-size config so the whole suite stays fast.
fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let text = r#"{
  "units": "um",
  "optics": {
    "n_particle": {"re": 1.45, "im": 0.0},
    "n_medium": 1.0,
    "volume_fraction": 0.05,
    "truncation_margin": 0
  },
  "size_grid": {"min": 0.05, "max": 0.5, "points": 100, "rule": "trapezoid"},
  "wavelength_grid": {"min": 0.4, "max": 1.0, "points": 40},
  "basis": {"q": 96, "half_width_factor": 1.0},
  "kernel": {"kind": "se", "sigma_f": 2.0, "ell": 0.03, "nu": 1.5},
  "inversion": {"constraint_jitter": 0.0},
  "truth": {"family": "bimodal", "components": [
    {"mean": 0.08, "std": 0.015, "weight": 0.35},
    {"mean": 0.35, "std": 0.05, "weight": 0.65}
  ]},
  "noise": {"relative_to_peak": 0.01},
  "seed": 42,
  "optimizer": {
    "restarts": 2,
    "max_iters": 60,
    "seed": 7,
    "sigma_f_bounds": [0.01, 100.0],
    "ell_bounds": [0.005, 0.9],
    "sigma_bounds": [1e-8, 10.0]
  }
}"#;
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn mie_table_has_full_grid_and_index_matched_nulls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = psd(
        &["mie-table", "--config", cfg.to_str().unwrap(), "--out", "."],
        dir.path(),
    );
    assert_exit(&out, 0);
    let table = std::fs::read_to_string(dir.path().join("mie_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "wavelength,radius,q_sca,A");
    assert_eq!(rows.len() - 1, 40 * 100);

    // Spot rows reproduce the library computation exactly.
    use psd_core::num_complex::Complex64;
    for &row in &[1usize, 777, 2048, 4000] {
        let fields: Vec<f64> = rows[row].split(',').map(|v| v.parse().unwrap()).collect();
        let (lambda, r, q, a) = (fields[0], fields[1], fields[2], fields[3]);
        let y = psd_core::size_parameter(r, lambda, 1.0).unwrap();
        let q_lib = psd_core::q_sca(y, Complex64::new(1.45, 0.0), 0).unwrap();
        assert!(
            (q - q_lib).abs() <= 1e-15 * q_lib.max(1.0),
            "q_sca row {row}"
        );
        assert!((a - 0.75 * 0.05 * q_lib / r).abs() <= 1e-15 * a.abs().max(1.0));
    }

    // Index-matched config: all efficiencies vanish.
    let mut cfg_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    cfg_json["optics"]["n_particle"]["re"] = serde_json::json!(1.0);
    let matched = dir.path().join("matched.json");
    std::fs::write(&matched, cfg_json.to_string()).unwrap();
    let out = psd(
        &[
            "mie-table",
            "--config",
            matched.to_str().unwrap(),
            "--out",
            "matched",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let table = std::fs::read_to_string(dir.path().join("matched/mie_table.csv")).unwrap();
    for line in table.lines().skip(1) {
        let q: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(q <= 1e-13, "index-matched q_sca {q}");
    }
}

#[test]
fn simulate_is_seed_deterministic_and_truth_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    for sub in ["a", "b"] {
        let out = psd(
            &[
                "simulate",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                sub,
                "--seed",
                "123",
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let a = std::fs::read_to_string(dir.path().join("a/measurements.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/measurements.csv")).unwrap();
    assert_eq!(a, b, "same seed must produce identical files");

    // Truth integrates to one (trapezoid over the stored nodes).
    let truth = std::fs::read_to_string(dir.path().join("a/truth.csv")).unwrap();
    let mut r = Vec::new();
    let mut rho = Vec::new();
    for line in truth.lines().skip(1) {
        let mut parts = line.split(',');
        r.push(parts.next().unwrap().parse::<f64>().unwrap());
        rho.push(parts.next().unwrap().parse::<f64>().unwrap());
    }
    let mut total = 0.0;
    for k in 1..r.len() {
        total += 0.5 * (rho[k] + rho[k - 1]) * (r[k] - r[k - 1]);
    }
    assert!((total - 1.0).abs() <= 1e-10, "truth integral {total}");

    // Different seed changes the data.
    let out = psd(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "c",
            "--seed",
            "124",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let c = std::fs::read_to_string(dir.path().join("c/measurements.csv")).unwrap();
    assert_ne!(a, c);

    // Zero noise: measurements equal the noiseless forward regardless of
    // seed, and no sigma column is meaningful beyond its zero value.
    let mut cfg_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    cfg_json["noise"] = serde_json::json!({"absolute": 0.0});
    let quiet = dir.path().join("quiet.json");
    std::fs::write(&quiet, cfg_json.to_string()).unwrap();
    let quiet_s = quiet.to_str().unwrap();
    for (sub, seed) in [("q1", "1"), ("q2", "2")] {
        let out = psd(
            &[
                "simulate", "--config", quiet_s, "--out", sub, "--seed", seed,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let q1 = std::fs::read_to_string(dir.path().join("q1/measurements.csv")).unwrap();
    let q2 = std::fs::read_to_string(dir.path().join("q2/measurements.csv")).unwrap();
    let strip_seeded_noise = |text: &str| -> Vec<(f64, f64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let mut p = l.split(',');
                (
                    p.next().unwrap().parse().unwrap(),
                    p.next().unwrap().parse().unwrap(),
                )
            })
            .collect()
    };
    assert_eq!(strip_seeded_noise(&q1), strip_seeded_noise(&q2));
}

#[test]
fn full_workflow_constrained_vs_unconstrained_and_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    assert_exit(
        &psd(&["simulate", "--config", cfg_s, "--out", "."], dir.path()),
        0,
    );

    // Fit with the joint objective.
    let out = psd(
        &[
            "fit",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--objective",
            "joint",
            "--out",
            ".",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let fit: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(fit["objective"].as_f64().unwrap().is_finite());
    let trace = std::fs::read_to_string(dir.path().join("fit_trace.csv")).unwrap();
    assert!(trace.starts_with("restart,iter,sigma_f,ell,sigma,objective\n"));
    assert!(trace.lines().count() > 10);

    // Constrained posterior inversion.
    let out = psd(
        &[
            "invert",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--constrained",
            "--posterior",
            "--out",
            "con",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("con/summary.json")).unwrap(),
    )
    .unwrap();
    let sum_rho = summary["sum_rho"].as_f64().unwrap();
    assert!(
        (sum_rho - 1.0).abs() <= 1e-6,
        "constrained sum_rho {sum_rho}"
    );

    // Unconstrained reports its integral as-is.
    let out = psd(
        &[
            "invert",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--unconstrained",
            "--out",
            "unc",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("unc/summary.json")).unwrap(),
    )
    .unwrap();
    assert!((summary["sum_rho"].as_f64().unwrap() - 1.0).abs() > 1e-3);

    // MAP and constrained posterior agree in the written CSVs.
    let out = psd(
        &[
            "invert",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--constrained",
            "--map",
            "--out",
            "map",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let read_col = |p: &Path, idx: usize| -> Vec<f64> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
            .collect()
    };
    let con_mean = read_col(&dir.path().join("con/result.csv"), 1);
    let map_mean = read_col(&dir.path().join("map/result.csv"), 1);
    let sup = con_mean
        .iter()
        .zip(&map_mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(sup <= 1e-6, "MAP vs posterior sup-norm {sup}");
    let map_summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("map/summary.json")).unwrap(),
    )
    .unwrap();
    assert!(map_summary["lagrange_c"].as_f64().is_some());

    // Credible bands have nonnegative width.
    let lo = read_col(&dir.path().join("con/result.csv"), 2);
    let hi = read_col(&dir.path().join("con/result.csv"), 3);
    assert!(lo.iter().zip(&hi).all(|(l, h)| h >= l));

    // Inversion with fitted theta.
    let out = psd(
        &[
            "invert",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--theta",
            "fit_summary.json",
            "--constrained",
            "--out",
            "fitted",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    // Evaluate: constrained beats unconstrained on this scenario.
    for (res, outdir) in [("con/result.csv", "con"), ("unc/result.csv", "unc")] {
        let out = psd(
            &[
                "eval",
                "--config",
                cfg_s,
                "--result",
                res,
                "--truth",
                "truth.csv",
                "--measurements",
                "measurements.csv",
                "--out",
                outdir,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let m_con: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("con/metrics.json")).unwrap(),
    )
    .unwrap();
    let m_unc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("unc/metrics.json")).unwrap(),
    )
    .unwrap();
    let mse_con = m_con["mse_vs_truth"].as_f64().unwrap();
    let mse_unc = m_unc["mse_vs_truth"].as_f64().unwrap();
    assert!(
        mse_con < mse_unc,
        "constrained MSE {mse_con} should beat unconstrained {mse_unc}"
    );
    assert!(m_con["forward_rel_rmse_vs_input"].as_f64().unwrap() < 0.2);
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    assert_exit(
        &psd(&["simulate", "--config", cfg_s, "--out", "."], dir.path()),
        0,
    );
    let out = psd(
        &[
            "invert",
            "--config",
            cfg_s,
            "--measurements",
            "measurements.csv",
            "--q",
            "64",
            "--kernel",
            "matern",
            "--nu",
            "2.5",
            "--out",
            "ov",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ov/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["q"].as_u64(), Some(64));
    assert_eq!(summary["kernel"].as_str(), Some("matern"));
    assert_eq!(summary["nu"].as_f64(), Some(2.5));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown key.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    let out = psd(
        &["simulate", "--config", bad.to_str().unwrap(), "--out", "."],
        dir.path(),
    );
    assert_exit(&out, 2);

    // Missing measurement file.
    let cfg = write_small_config(dir.path());
    let out = psd(
        &[
            "invert",
            "--config",
            cfg.to_str().unwrap(),
            "--measurements",
            "nope.csv",
            "--out",
            ".",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);

    // Malformed measurement file.
    std::fs::write(dir.path().join("mal.csv"), "wavelength,mu\n0.4,abc\n").unwrap();
    let out = psd(
        &[
            "invert",
            "--config",
            cfg.to_str().unwrap(),
            "--measurements",
            "mal.csv",
            "--out",
            ".",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // Empty measurement file is an explicit error.
    std::fs::write(dir.path().join("empty.csv"), "wavelength,mu\n").unwrap();
    let out = psd(
        &[
            "invert",
            "--config",
            cfg.to_str().unwrap(),
            "--measurements",
            "empty.csv",
            "--out",
            ".",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn eval_grid_mismatch_exits_2_with_both_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    std::fs::write(
        dir.path().join("result.csv"),
        "r,rho_mean,rho_lo95,rho_hi95\n0.1,1.0,0.5,1.5\n0.2,1.0,0.5,1.5\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("truth.csv"),
        "r,rho_true\n0.05,1.0\n0.2,1.0\n",
    )
    .unwrap();
    let out = psd(
        &[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--result",
            "result.csv",
            "--truth",
            "truth.csv",
            "--out",
            ".",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("[0.1, 0.2]") && err.contains("[0.05, 0.2]"),
        "stderr: {err}"
    );
}

#[test]
fn fit_trace_is_reproducible_under_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    assert_exit(
        &psd(&["simulate", "--config", cfg_s, "--out", "."], dir.path()),
        0,
    );
    for sub in ["f1", "f2"] {
        let out = psd(
            &[
                "fit",
                "--config",
                cfg_s,
                "--measurements",
                "measurements.csv",
                "--objective",
                "standard",
                "--restarts",
                "1",
                "--out",
                sub,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let a = std::fs::read_to_string(dir.path().join("f1/fit_trace.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("f2/fit_trace.csv")).unwrap();
    assert_eq!(a, b);
    // The summary objective is reproduced exactly by the identical run.
    let sa = std::fs::read_to_string(dir.path().join("f1/fit_summary.json")).unwrap();
    let sb = std::fs::read_to_string(dir.path().join("f2/fit_summary.json")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn objectives_differ_when_constraint_is_informative() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    assert_exit(
        &psd(&["simulate", "--config", cfg_s, "--out", "."], dir.path()),
        0,
    );
    for (obj, sub) in [("standard", "std"), ("joint", "joint")] {
        let out = psd(
            &[
                "fit",
                "--config",
                cfg_s,
                "--measurements",
                "measurements.csv",
                "--objective",
                obj,
                "--out",
                sub,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let read_obj = |sub: &str| -> f64 {
        let v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(sub).join("fit_summary.json")).unwrap(),
        )
        .unwrap();
        v["objective"].as_f64().unwrap()
    };
    // Different evidence, different optimum value.
    assert_ne!(read_obj("std"), read_obj("joint"));
}

#[test]
fn thread_cap_env_var_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_psd"))
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", "."])
        .env("PSD_INVERT_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("measurements.csv").exists());
}
