//! Subcommand implementations.

use std::path::Path;

use psd_core::hyperopt::FitObjective;
use psd_core::io::{self, Summary, ThetaSummary};
use psd_core::pipeline::{self, ConstraintMode, Estimator, ForwardModel};
use psd_core::scenario::MeasurementSet;
use psd_core::{Config, Error, Result};

use crate::CommonOpts;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// `mie-table`: one row per (wavelength, radius) pair with Q_sca and A.
pub fn mie_table(common: &CommonOpts) -> Result<()> {
    let cfg = common.load_config()?;
    let wavelengths = cfg.wavelength_grid()?;
    let sizes = cfg.size_grid()?;
    let mut out = String::from("wavelength,radius,q_sca,A\n");
    for &lambda in wavelengths.values() {
        let optics = cfg.optics.optics_at(lambda)?;
        for &r in sizes.radii() {
            let y = psd_core::size_parameter(r, lambda, optics.n_medium)?;
            let q = psd_core::q_sca(y, optics.relative_index(), optics.truncation_margin)?;
            let a = 0.75 * optics.volume_fraction * q / r;
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt(lambda),
                fmt(r),
                fmt(q),
                fmt(a)
            ));
        }
    }
    io::atomic_write(&common.out.join("mie_table.csv"), &out)?;
    Ok(())
}

/// `simulate`: writes `measurements.csv` and `truth.csv`.
pub fn simulate(common: &CommonOpts) -> Result<()> {
    let cfg = common.load_config()?;
    let model = ForwardModel::build(&cfg)?;
    let (rho_true, set) = pipeline::simulate(&cfg, &model, cfg.seed)?;
    io::write_measurements(&common.out.join("measurements.csv"), &set)?;
    io::write_truth(&common.out.join("truth.csv"), &model.size_grid, &rho_true)?;
    Ok(())
}

fn load_measurements(cfg: &Config, path: &Path) -> Result<MeasurementSet> {
    io::read_measurements(path, &cfg.units)
}

/// `fit`: writes `fit_summary.json` and `fit_trace.csv`.
pub fn fit(
    common: &CommonOpts,
    measurements: &Path,
    objective: &str,
    restarts: Option<usize>,
) -> Result<()> {
    let mut cfg = common.load_config()?;
    if let Some(r) = restarts {
        cfg.optimizer.restarts = r;
    }
    let objective: FitObjective = objective.parse()?;
    let model = ForwardModel::build(&cfg)?;
    let set = load_measurements(&cfg, measurements)?;
    let report = pipeline::fit(&cfg, &model, &set, objective)?;

    let summary = Summary {
        sum_rho: None,
        mse_vs_truth: None,
        lagrange_c: None,
        theta: ThetaSummary {
            sigma_f: report.best.params.sigma_f,
            ell: report.best.params.ell,
            sigma: report.best.params.sigma_noise,
        },
        q: cfg.basis.q,
        kernel: cfg.kernel.kind.to_string(),
        nu: cfg.kernel.nu,
        seed: Some(cfg.optimizer.seed),
        objective: Some(report.best_objective),
    };
    io::write_summary(&common.out.join("fit_summary.json"), &summary)?;
    io::write_trace(&common.out.join("fit_trace.csv"), &report.trace)?;
    eprintln!(
        "psd: fit: best objective {:.6} after {} evaluations ({} failed restarts)",
        report.best_objective, report.evaluations, report.failed_restarts
    );
    Ok(())
}

/// `invert`: writes `result.csv` and `summary.json`.
pub fn invert(
    common: &CommonOpts,
    measurements: &Path,
    theta: Option<&Path>,
    unconstrained: bool,
    map: bool,
) -> Result<()> {
    let mut cfg = common.load_config()?;
    if let Some(theta_path) = theta {
        let fitted = io::read_summary(theta_path)?;
        cfg.kernel.sigma_f = fitted.theta.sigma_f;
        cfg.kernel.ell = fitted.theta.ell;
        cfg.inversion.sigma_noise = Some(fitted.theta.sigma);
        cfg.validate()?;
    }
    let model = ForwardModel::build(&cfg)?;
    let set = load_measurements(&cfg, measurements)?;

    let mode = if unconstrained {
        ConstraintMode::Unconstrained
    } else {
        ConstraintMode::Constrained
    };
    let estimator = if map {
        Estimator::Map
    } else {
        Estimator::Posterior
    };
    let result = pipeline::invert(&cfg, &model, &set, mode, estimator)?;

    io::write_result(&common.out.join("result.csv"), &result)?;
    let sigma = pipeline::resolve_sigma(&cfg, &set)?;
    let summary = Summary {
        sum_rho: Some(result.sum_rho),
        mse_vs_truth: None,
        lagrange_c: result.lagrange_c,
        theta: ThetaSummary {
            sigma_f: cfg.kernel.sigma_f,
            ell: cfg.kernel.ell,
            sigma,
        },
        q: cfg.basis.q,
        kernel: cfg.kernel.kind.to_string(),
        nu: cfg.kernel.nu,
        seed: set.seed.or(Some(cfg.seed)),
        objective: None,
    };
    io::write_summary(&common.out.join("summary.json"), &summary)?;
    eprintln!(
        "psd: invert: sum_rho = {:.9}, negative mass fraction = {:.3e}",
        result.sum_rho,
        result.negative_mass_fraction(model.size_grid.weights())
    );
    Ok(())
}

/// `eval`: writes `metrics.json`.
pub fn eval(
    common: &CommonOpts,
    result: &Path,
    truth: &Path,
    measurements: Option<&Path>,
) -> Result<()> {
    let cfg = common.load_config()?;
    let stored = io::read_result(result, &cfg.units)?;
    let (truth_r, truth_rho) = io::read_truth(truth, &cfg.units)?;
    let set = match measurements {
        Some(path) => Some(load_measurements(&cfg, path)?),
        None => None,
    };

    // Consistency recheck: the stored estimate must integrate to what its
    // own grid says it does.
    let recomputed = stored.sum_rho()?;
    if !recomputed.is_finite() {
        return Err(Error::numeric(
            "stored result integrates to a non-finite value",
        ));
    }

    let metrics = pipeline::evaluate(
        &cfg,
        &stored.radii,
        &stored.rho_mean,
        &truth_r,
        &truth_rho,
        set.as_ref(),
    )?;
    io::write_metrics(&common.out.join("metrics.json"), &metrics)?;
    eprintln!(
        "psd: eval: mse = {:.6e}, sum_rho = {:.9}",
        metrics.mse_vs_truth, metrics.sum_rho
    );
    Ok(())
}
