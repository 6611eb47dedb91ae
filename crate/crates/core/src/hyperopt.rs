//! Marginal-likelihood evaluation and hyperparameter optimization.
//!
//! The hyperparameters `θ = (σ_f, ℓ, σ)` enter the evidence only through
//! the prior diagonal `Λ(σ_f, ℓ)` and the noise variance, so both the
//! standard log marginal likelihood (measurements alone) and the joint one
//! (measurements plus the normalization pseudo-observation) are cheap to
//! evaluate once the projections are fixed. Optimization is derivative-free
//! Nelder-Mead in log-parameter space inside a box, with seeded random
//! restarts; every evaluation is recorded in a trace for reproducibility.

use nalgebra::{DMatrix, DVector};

use crate::basis::lambda_from_eigenvalues;
use crate::error::{Error, Result};
use crate::kernel::{KernelHyperparams, KernelKind};
use crate::linalg::CholeskyGuard;
use crate::rng::PortableRng;

/// Positive box bounds (linear space) used as a log-space box by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBounds {
    pub sigma_f: (f64, f64),
    pub ell: (f64, f64),
    pub sigma_noise: (f64, f64),
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("sigma_f", self.sigma_f),
            ("ell", self.ell),
            ("sigma_noise", self.sigma_noise),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::domain(format!(
                    "invalid {name} bounds [{lo}, {hi}]: need 0 < lo < hi < inf"
                )));
            }
        }
        Ok(())
    }

    fn as_array(&self) -> [(f64, f64); 3] {
        [self.sigma_f, self.ell, self.sigma_noise]
    }
}

/// Point value of the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub sigma_f: f64,
    pub ell: f64,
    pub sigma_noise: f64,
}

impl HyperParams {
    fn from_log(z: &[f64; 3]) -> Self {
        HyperParams {
            sigma_f: z[0].exp(),
            ell: z[1].exp(),
            sigma_noise: z[2].exp(),
        }
    }

    fn to_log(self) -> [f64; 3] {
        [self.sigma_f.ln(), self.ell.ln(), self.sigma_noise.ln()]
    }
}

/// Hyperparameter state: point value, fixed Matérn smoothness, and the
/// optimizer box. `nu` is configuration, not an optimized parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperState {
    pub params: HyperParams,
    pub nu: f64,
    pub bounds: HyperBounds,
}

impl HyperState {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        for (name, v) in [
            ("sigma_f", self.params.sigma_f),
            ("ell", self.params.ell),
            ("sigma_noise", self.params.sigma_noise),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which evidence the optimizer maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitObjective {
    /// Measurements only.
    Standard,
    /// Measurements plus the normalization pseudo-observation `Z = 1`.
    Joint,
}

impl std::str::FromStr for FitObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(FitObjective::Standard),
            "joint" => Ok(FitObjective::Joint),
            other => Err(Error::domain(format!("unknown objective '{other}'"))),
        }
    }
}

/// Fixed model context for likelihood evaluations: projections and the
/// eigenvalues from which `Λ(θ)` is rebuilt per candidate.
#[derive(Debug, Clone)]
pub struct LmlContext<'a> {
    pub psi_a: &'a DMatrix<f64>,
    /// Constraint row `h` (used by the joint objective).
    pub psi_b: &'a DVector<f64>,
    pub eigenvalues: &'a [f64],
    pub kind: KernelKind,
    pub nu: f64,
}

impl<'a> LmlContext<'a> {
    fn kernel(&self, params: &HyperParams) -> Result<KernelHyperparams> {
        let k = KernelHyperparams {
            kind: self.kind,
            sigma_f: params.sigma_f,
            ell: params.ell,
            nu: self.nu,
        };
        k.validate()?;
        Ok(k)
    }

    fn lambda(&self, params: &HyperParams) -> Result<Vec<f64>> {
        lambda_from_eigenvalues(self.eigenvalues, &self.kernel(params)?)
    }
}

/// Evidence blocks `D = Ψ_A Λ Ψ_Aᵀ + σ²I`, `V = Ψ_A Λ Ψ_Bᵀ`, and the scalar
/// Schur complement `Y = Ψ_B Λ Ψ_Bᵀ − Vᵀ D⁻¹ V`.
#[derive(Debug, Clone)]
pub struct LmlBlocks {
    pub d: DMatrix<f64>,
    pub v: DVector<f64>,
    pub y_schur: f64,
}

/// Builds the evidence blocks for given hyperparameters.
pub fn build_blocks(ctx: &LmlContext, params: &HyperParams) -> Result<LmlBlocks> {
    let lam = ctx.lambda(params)?;
    let n = ctx.psi_a.nrows();
    let mut la = ctx.psi_a.clone();
    for (j, &l) in lam.iter().enumerate() {
        la.column_mut(j).scale_mut(l);
    }
    let mut d = &la * ctx.psi_a.transpose();
    let s2 = params.sigma_noise * params.sigma_noise;
    for i in 0..n {
        d[(i, i)] += s2;
    }
    let v = &la * ctx.psi_b;
    let s_b: f64 = lam
        .iter()
        .zip(ctx.psi_b.iter())
        .map(|(&l, &h)| l * h * h)
        .sum();
    let y_schur = if n > 0 {
        let chol = CholeskyGuard::new(&d, "evidence block D")?;
        s_b - v.dot(&chol.solve_vec(&v))
    } else {
        s_b
    };
    Ok(LmlBlocks { d, v, y_schur })
}

/// Standard log marginal likelihood
/// `−½ log|D| − ½ μᵀD⁻¹μ − (n/2) log 2π` via symmetric factorization.
pub fn log_marginal_likelihood(
    ctx: &LmlContext,
    params: &HyperParams,
    mu: &DVector<f64>,
) -> Result<f64> {
    check_len(ctx, mu)?;
    let n = mu.len();
    if n == 0 {
        return Ok(0.0);
    }
    let lam = ctx.lambda(params)?;
    let mut la = ctx.psi_a.clone();
    for (j, &l) in lam.iter().enumerate() {
        la.column_mut(j).scale_mut(l);
    }
    let mut d = &la * ctx.psi_a.transpose();
    let s2 = params.sigma_noise * params.sigma_noise;
    for i in 0..n {
        d[(i, i)] += s2;
    }
    let chol = CholeskyGuard::new(&d, "evidence block D")
        .map_err(|e| Error::numeric(format!("{e} (theta = {params:?})")))?;
    let quad = mu.dot(&chol.solve_vec(mu));
    let value = -0.5 * chol.log_determinant()
        - 0.5 * quad
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "log marginal likelihood not finite (theta = {params:?})"
        )));
    }
    Ok(value)
}

/// Joint log marginal likelihood of `[μ; 1]` under the stacked model, in
/// Schur-complement form:
/// `−½ μᵀD⁻¹μ − ½ (1 − VᵀD⁻¹μ)² / Y − ½ log|D| − ½ log Y − ((n+1)/2) log 2π`.
pub fn joint_log_marginal_likelihood(
    ctx: &LmlContext,
    params: &HyperParams,
    mu: &DVector<f64>,
) -> Result<f64> {
    check_len(ctx, mu)?;
    let n = mu.len();
    let blocks = build_blocks(ctx, params)?;
    if !(blocks.y_schur > 0.0) {
        return Err(Error::numeric(format!(
            "constraint Schur complement Y = {:.3e} is not positive (theta = {params:?})",
            blocks.y_schur
        )));
    }
    let (log_det_d, quad, resid) = if n > 0 {
        let chol = CholeskyGuard::new(&blocks.d, "evidence block D")
            .map_err(|e| Error::numeric(format!("{e} (theta = {params:?})")))?;
        let d_inv_mu = chol.solve_vec(mu);
        (
            chol.log_determinant(),
            mu.dot(&d_inv_mu),
            1.0 - blocks.v.dot(&d_inv_mu),
        )
    } else {
        (0.0, 0.0, 1.0)
    };
    let value = -0.5 * quad
        - 0.5 * resid * resid / blocks.y_schur
        - 0.5 * log_det_d
        - 0.5 * blocks.y_schur.ln()
        - 0.5 * (n as f64 + 1.0) * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "joint log marginal likelihood not finite (theta = {params:?})"
        )));
    }
    Ok(value)
}

/// One recorded objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub restart: usize,
    pub iter: usize,
    pub sigma_f: f64,
    pub ell: f64,
    pub sigma: f64,
    /// Log marginal likelihood; `-inf` when the evaluation failed.
    pub objective: f64,
}

/// Optimization outcome: best state plus the full evaluation trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub best: HyperState,
    pub best_objective: f64,
    pub trace: Vec<TraceRecord>,
    pub evaluations: usize,
    pub failed_restarts: usize,
}

/// Maximizes the chosen evidence over `θ` with Nelder-Mead in log space.
///
/// Restart 0 starts from `init` (clipped into the box); the remaining
/// restarts start from seeded log-uniform draws. The reported optimum is the
/// best *evaluated* point, so it is never worse than the initial guess; ties
/// across restarts resolve to the lowest restart index. Deterministic for a
/// fixed seed.
pub fn optimize(
    objective: FitObjective,
    ctx: &LmlContext,
    mu: &DVector<f64>,
    init: &HyperState,
    restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<FitReport> {
    init.validate()?;
    if restarts < 1 {
        return Err(Error::domain("at least one restart is required"));
    }
    let bounds = init.bounds;
    let log_box: Vec<(f64, f64)> = bounds
        .as_array()
        .iter()
        .map(|&(lo, hi)| (lo.ln(), hi.ln()))
        .collect();
    let clip = |z: &mut [f64; 3]| {
        for (zi, &(lo, hi)) in z.iter_mut().zip(&log_box) {
            *zi = zi.clamp(lo, hi);
        }
    };

    let mut rng = PortableRng::from_seed(seed);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut best: Option<(f64, usize, HyperParams)> = None;
    let mut failed_restarts = 0usize;
    let mut failure_notes: Vec<String> = Vec::new();

    for restart in 0..restarts {
        let mut z0 = if restart == 0 {
            init.params.to_log()
        } else {
            let mut z = [0.0; 3];
            for (zi, &(lo, hi)) in z.iter_mut().zip(&log_box) {
                *zi = rng.uniform_in(lo, hi);
            }
            z
        };
        clip(&mut z0);

        let mut iter_counter = 0usize;
        let mut restart_best: Option<(f64, HyperParams)> = None;
        let mut last_error: Option<String> = None;
        {
            let mut eval = |z: &[f64; 3]| -> f64 {
                let params = HyperParams::from_log(z);
                let value = match objective {
                    FitObjective::Standard => log_marginal_likelihood(ctx, &params, mu),
                    FitObjective::Joint => joint_log_marginal_likelihood(ctx, &params, mu),
                };
                let obj = match value {
                    Ok(v) => v,
                    Err(e) => {
                        last_error = Some(e.to_string());
                        f64::NEG_INFINITY
                    }
                };
                trace.push(TraceRecord {
                    restart,
                    iter: iter_counter,
                    sigma_f: params.sigma_f,
                    ell: params.ell,
                    sigma: params.sigma_noise,
                    objective: obj,
                });
                iter_counter += 1;
                if obj.is_finite() {
                    match restart_best {
                        Some((b, _)) if b >= obj => {}
                        _ => restart_best = Some((obj, params)),
                    }
                }
                -obj // Nelder-Mead minimizes
            };

            nelder_mead(&mut eval, z0, &log_box, max_iters);
        }

        match restart_best {
            Some((obj, params)) => match best {
                Some((b, _, _)) if b >= obj => {}
                _ => best = Some((obj, restart, params)),
            },
            None => {
                failed_restarts += 1;
                failure_notes.push(format!(
                    "restart {restart}: every evaluation failed ({})",
                    last_error.unwrap_or_else(|| "unknown".into())
                ));
            }
        }
    }

    let evaluations = trace.len();
    match best {
        Some((best_objective, _, params)) => Ok(FitReport {
            best: HyperState {
                params,
                nu: init.nu,
                bounds,
            },
            best_objective,
            trace,
            evaluations,
            failed_restarts,
        }),
        None => Err(Error::Optimization(format!(
            "all {restarts} restarts failed: {}",
            failure_notes.join("; ")
        ))),
    }
}

/// Standard Nelder-Mead on a 3-dimensional box (reflection 1, expansion 2,
/// contraction 1/2, shrink 1/2). Candidates are projected back into the box,
/// which keeps every evaluation inside the bounds.
fn nelder_mead<F: FnMut(&[f64; 3]) -> f64>(
    f: &mut F,
    start: [f64; 3],
    log_box: &[(f64, f64)],
    max_iters: usize,
) {
    const DIM: usize = 3;
    let clip = |z: &mut [f64; 3]| {
        for (zi, &(lo, hi)) in z.iter_mut().zip(log_box) {
            *zi = zi.clamp(lo, hi);
        }
    };

    // Initial simplex: start plus one step along each axis, flipped when the
    // step would leave the box. Capping the step at half the box span keeps
    // the flipped vertex inside and the simplex non-degenerate.
    let mut simplex: Vec<[f64; 3]> = vec![start];
    for d in 0..DIM {
        let mut v = start;
        let (lo, hi) = log_box[d];
        let step = (0.25f64).min(0.5 * (hi - lo));
        v[d] = if v[d] + step <= hi {
            v[d] + step
        } else {
            v[d] - step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(&mut *f).collect();

    for _ in 0..max_iters {
        // Sort simplex by value (ascending: best first).
        let mut order: Vec<usize> = (0..=DIM).collect();
        order.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let sorted: Vec<[f64; 3]> = order.iter().map(|&i| simplex[i]).collect();
        let sorted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = sorted;
        values = sorted_vals;

        let spread = values[DIM] - values[0];
        if spread.abs() < 1e-11 * (1.0 + values[0].abs()) {
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = [0.0; 3];
        for v in simplex.iter().take(DIM) {
            for d in 0..DIM {
                centroid[d] += v[d] / DIM as f64;
            }
        }

        let worst = simplex[DIM];
        let mut reflected = [0.0; 3];
        for d in 0..DIM {
            reflected[d] = centroid[d] + (centroid[d] - worst[d]);
        }
        clip(&mut reflected);
        let f_r = f(&reflected);

        if f_r < values[0] {
            // Try to expand.
            let mut expanded = [0.0; 3];
            for d in 0..DIM {
                expanded[d] = centroid[d] + 2.0 * (centroid[d] - worst[d]);
            }
            clip(&mut expanded);
            let f_e = f(&expanded);
            if f_e < f_r {
                simplex[DIM] = expanded;
                values[DIM] = f_e;
            } else {
                simplex[DIM] = reflected;
                values[DIM] = f_r;
            }
        } else if f_r < values[DIM - 1] {
            simplex[DIM] = reflected;
            values[DIM] = f_r;
        } else {
            // Contract (outside if the reflection helped over the worst).
            let towards = if f_r < values[DIM] { reflected } else { worst };
            let mut contracted = [0.0; 3];
            for d in 0..DIM {
                contracted[d] = centroid[d] + 0.5 * (towards[d] - centroid[d]);
            }
            clip(&mut contracted);
            let f_c = f(&contracted);
            if f_c < values[DIM].min(f_r) {
                simplex[DIM] = contracted;
                values[DIM] = f_c;
            } else {
                // Shrink towards the best vertex.
                let best = simplex[0];
                for i in 1..=DIM {
                    for d in 0..DIM {
                        simplex[i][d] = best[d] + 0.5 * (simplex[i][d] - best[d]);
                    }
                    clip(&mut simplex[i]);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
}

fn check_len(ctx: &LmlContext, mu: &DVector<f64>) -> Result<()> {
    if mu.len() != ctx.psi_a.nrows() {
        return Err(Error::dimension(format!(
            "mu has {} entries but psi_A has {} rows",
            mu.len(),
            ctx.psi_a.nrows()
        )));
    }
    Ok(())
}
