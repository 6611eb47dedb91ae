//! End-to-end assembly: configuration -> forward model -> inversion.
//!
//! The CLI and the test suites drive everything through this module so
//! that the same code paths produce files and in-memory results.

use nalgebra::{DMatrix, DVector};

use crate::basis::{build_expansion, BasisExpansion};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{SizeGrid, WavelengthGrid};
use crate::hyperopt::{optimize, FitObjective, FitReport, HyperParams, LmlContext};
use crate::inference::{
    map_lagrange, posterior_constrained, posterior_unconstrained, ForwardOperators, PosteriorResult,
};
use crate::io::EvalMetrics;
use crate::kernel::KernelHyperparams;
use crate::mie::scattering_kernel;
use crate::scenario::{forward_quadrature, make_true_rho, simulate_with_kernel, MeasurementSet};

/// Constraint handling for an inversion run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    Constrained,
    Unconstrained,
}

/// Point-estimate flavor for an inversion run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Full posterior (mean + covariance).
    Posterior,
    /// Lagrange-multiplier MAP point estimate.
    Map,
}

/// Precomputed forward model for a configuration: grids, Mie kernel matrix,
/// eigenbasis, and projections. Hyperparameters can change afterwards
/// without retabulating the Mie kernel.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub wavelength_grid: WavelengthGrid,
    pub size_grid: SizeGrid,
    pub a_matrix: DMatrix<f64>,
    pub expansion: BasisExpansion,
    pub psi_a: DMatrix<f64>,
    pub psi_b: DVector<f64>,
}

impl ForwardModel {
    /// Builds the model from a configuration (dispersive index tables are
    /// resolved per wavelength).
    pub fn build(config: &Config) -> Result<Self> {
        config.validate()?;
        let size_grid = config.size_grid()?;
        let wavelength_grid = config.wavelength_grid()?;
        let a_matrix = if config.optics.is_dispersive() {
            let mut m = DMatrix::zeros(wavelength_grid.len(), size_grid.len());
            for (i, &lambda) in wavelength_grid.values().iter().enumerate() {
                let optics = config.optics.optics_at(lambda)?;
                for (k, &r) in size_grid.radii().iter().enumerate() {
                    m[(i, k)] = scattering_kernel(lambda, r, &optics)?;
                }
            }
            m
        } else {
            crate::mie::kernel_matrix(
                &wavelength_grid,
                &size_grid,
                &config.optics.optics_constant()?,
            )?
        };
        let expansion = build_expansion(
            &config.domain()?,
            config.basis.q,
            &config.kernel.hyperparams()?,
        )?;
        let phi_quad = crate::basis::phi_matrix(&expansion, size_grid.radii())?;
        let psi_a = crate::inference::project_forward(&a_matrix, &phi_quad, size_grid.weights())?;
        let psi_b = DVector::from_vec(crate::basis::constraint_row(&expansion, &size_grid)?);
        Ok(ForwardModel {
            wavelength_grid,
            size_grid,
            a_matrix,
            expansion,
            psi_a,
            psi_b,
        })
    }

    /// Swaps kernel hyperparameters (the projections do not depend on them).
    pub fn with_kernel(&self, kernel: KernelHyperparams) -> Result<Self> {
        Ok(ForwardModel {
            expansion: self.expansion.with_kernel(kernel)?,
            ..self.clone()
        })
    }

    pub fn operators(&self, sigma_noise: f64, constraint_jitter: f64) -> Result<ForwardOperators> {
        ForwardOperators::new(
            self.psi_a.clone(),
            self.psi_b.clone(),
            sigma_noise,
            constraint_jitter,
        )
    }

    /// Likelihood context for hyperparameter fitting.
    pub fn lml_context(&self) -> LmlContext<'_> {
        LmlContext {
            psi_a: &self.psi_a,
            psi_b: &self.psi_b,
            eigenvalues: self.expansion.eigenvalues(),
            kind: self.expansion.kernel().kind,
            nu: self.expansion.kernel().nu,
        }
    }

    /// Noiseless forward prediction of a gridded density.
    pub fn forward(&self, rho: &[f64]) -> Result<Vec<f64>> {
        forward_quadrature(&self.a_matrix, rho, &self.size_grid)
    }
}

/// Simulates the configured scenario: ground truth plus noisy measurements.
pub fn simulate(
    config: &Config,
    model: &ForwardModel,
    seed: u64,
) -> Result<(Vec<f64>, MeasurementSet)> {
    let truth_spec = config.truth_spec()?;
    let rho_true = make_true_rho(&truth_spec)?;
    let noiseless = model.forward(&rho_true)?;
    let sigma = config.noise.resolve(&noiseless)?;
    let set = simulate_with_kernel(
        &model.a_matrix,
        &rho_true,
        &model.wavelength_grid,
        &model.size_grid,
        sigma,
        seed,
    )?;
    Ok((rho_true, set))
}

/// Noise std for inversion: per-file sigma when recorded, otherwise the
/// configured value.
pub fn resolve_sigma(config: &Config, measurements: &MeasurementSet) -> Result<f64> {
    if let Some(s) = measurements.sigma_used {
        if s > 0.0 {
            return Ok(s);
        }
    }
    config.inversion.sigma_noise.ok_or_else(|| {
        Error::domain(
            "no noise level available: measurement file has no sigma column and inversion.sigma_noise is unset",
        )
    })
}

/// Runs one inversion with the model's current hyperparameters.
pub fn invert(
    config: &Config,
    model: &ForwardModel,
    measurements: &MeasurementSet,
    mode: ConstraintMode,
    estimator: Estimator,
) -> Result<PosteriorResult> {
    if measurements.len() != model.wavelength_grid.len() {
        return Err(Error::dimension(format!(
            "measurement set has {} points but the model wavelength grid has {}",
            measurements.len(),
            model.wavelength_grid.len()
        )));
    }
    let sigma = resolve_sigma(config, measurements)?;
    let ops = model.operators(sigma, config.inversion.constraint_jitter)?;
    let mu = measurements.mu_vector();
    match (mode, estimator) {
        (ConstraintMode::Constrained, Estimator::Posterior) => {
            posterior_constrained(&ops, &model.expansion, &model.size_grid, &mu)
        }
        (ConstraintMode::Constrained, Estimator::Map) => {
            map_lagrange(&ops, &model.expansion, &model.size_grid, &mu)
        }
        (ConstraintMode::Unconstrained, Estimator::Posterior) => {
            posterior_unconstrained(&ops, &model.expansion, &model.size_grid, &mu)
        }
        (ConstraintMode::Unconstrained, Estimator::Map) => {
            // Without the constraint the MAP coincides with the posterior mean.
            posterior_unconstrained(&ops, &model.expansion, &model.size_grid, &mu)
        }
    }
}

/// Fits hyperparameters by maximizing the chosen evidence.
pub fn fit(
    config: &Config,
    model: &ForwardModel,
    measurements: &MeasurementSet,
    objective: FitObjective,
) -> Result<FitReport> {
    let mut init = config.hyper_state()?;
    // Seed the noise guess from the file when available.
    if let Some(s) = measurements.sigma_used {
        if s > 0.0 {
            init.params.sigma_noise = s.clamp(init.bounds.sigma_noise.0, init.bounds.sigma_noise.1);
        }
    }
    let ctx = model.lml_context();
    optimize(
        objective,
        &ctx,
        &measurements.mu_vector(),
        &init,
        config.optimizer.restarts,
        config.optimizer.max_iters,
        config.optimizer.seed,
    )
}

/// Applies fitted hyperparameters to a config's kernel section.
pub fn apply_theta(config: &Config, theta: &HyperParams) -> Config {
    let mut out = config.clone();
    out.kernel.sigma_f = theta.sigma_f;
    out.kernel.ell = theta.ell;
    out.inversion.sigma_noise = Some(theta.sigma_noise);
    out
}

/// Mean squared error on the truth grid; the estimate is linearly
/// interpolated onto the truth nodes when the grids differ (order-1).
/// Truth nodes outside the estimate's range are a grid-mismatch error.
pub fn mse_on_truth_grid(
    est_radii: &[f64],
    est_rho: &[f64],
    truth_radii: &[f64],
    truth_rho: &[f64],
) -> Result<f64> {
    if est_radii.len() != est_rho.len() || truth_radii.len() != truth_rho.len() {
        return Err(Error::dimension("grid/value length mismatch"));
    }
    let (e_min, e_max) = (est_radii[0], est_radii[est_radii.len() - 1]);
    let (t_min, t_max) = (truth_radii[0], truth_radii[truth_radii.len() - 1]);
    let tol = 1e-12 * (e_max - e_min);
    if t_min < e_min - tol || t_max > e_max + tol {
        return Err(Error::dimension(format!(
            "grid mismatch: estimate covers [{e_min}, {e_max}] but truth covers [{t_min}, {t_max}]"
        )));
    }
    let mut acc = 0.0;
    for (i, &r) in truth_radii.iter().enumerate() {
        let est = interp_linear(est_radii, est_rho, r);
        let d = est - truth_rho[i];
        acc += d * d;
    }
    Ok(acc / truth_radii.len() as f64)
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let idx = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let t = (x - x0) / (x1 - x0);
    ys[idx - 1] + t * (ys[idx] - ys[idx - 1])
}

/// Relative RMSE `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!(
            "relative_rmse: {} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        return Err(Error::domain("relative_rmse reference is identically zero"));
    }
    Ok((num / den).sqrt())
}

/// Evaluates a stored estimate against a stored truth; optionally re-predicts
/// the spectrum through the forward model and scores it against the measured
/// input and against the noiseless forward of the truth.
pub fn evaluate(
    config: &Config,
    est_radii: &[f64],
    est_rho: &[f64],
    truth_radii: &[f64],
    truth_rho: &[f64],
    measurements: Option<&MeasurementSet>,
) -> Result<EvalMetrics> {
    let mse = mse_on_truth_grid(est_radii, est_rho, truth_radii, truth_rho)?;
    let est_grid = SizeGrid::from_nodes_trapezoid(est_radii.to_vec())?;
    let sum_rho = est_grid.integrate(est_rho)?;

    let mut vs_input = None;
    let mut vs_noiseless = None;
    if let Some(set) = measurements {
        // Forward model on the estimate's grid at the measured wavelengths.
        let optics_rows: Result<Vec<Vec<f64>>> = set
            .wavelengths
            .values()
            .iter()
            .map(|&lambda| {
                let optics = config.optics.optics_at(lambda)?;
                est_radii
                    .iter()
                    .map(|&r| scattering_kernel(lambda, r, &optics))
                    .collect()
            })
            .collect();
        let rows = optics_rows?;
        let a = DMatrix::from_fn(set.len(), est_radii.len(), |i, k| rows[i][k]);
        let mu_hat = forward_quadrature(&a, est_rho, &est_grid)?;
        vs_input = Some(relative_rmse(&mu_hat, &set.mu)?);

        // Noiseless reference from the truth density, on the truth grid.
        let truth_grid = SizeGrid::from_nodes_trapezoid(truth_radii.to_vec())?;
        let rows_truth: Result<Vec<Vec<f64>>> = set
            .wavelengths
            .values()
            .iter()
            .map(|&lambda| {
                let optics = config.optics.optics_at(lambda)?;
                truth_radii
                    .iter()
                    .map(|&r| scattering_kernel(lambda, r, &optics))
                    .collect()
            })
            .collect();
        let rows_truth = rows_truth?;
        let a_truth = DMatrix::from_fn(set.len(), truth_radii.len(), |i, k| rows_truth[i][k]);
        let mu_clean = forward_quadrature(&a_truth, truth_rho, &truth_grid)?;
        vs_noiseless = Some(relative_rmse(&mu_hat, &mu_clean)?);
    }

    Ok(EvalMetrics {
        mse_vs_truth: mse,
        sum_rho,
        forward_rel_rmse_vs_input: vs_input,
        forward_rel_rmse_vs_noiseless: vs_noiseless,
    })
}
