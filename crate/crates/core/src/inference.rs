//! Posterior inference for the projected measurement model.
//!
//! The density is expanded on the Laplace eigenbasis, `ρ(r) = Σ α_j φ_j(r)`
//! with independent priors `α_j ~ N(0, Λ_j)`, so measurements become the
//! linear system `μ = Ψ_A α + ε` and the normalization turns into a single
//! noise-free pseudo-observation `Ψ_B α = 1`. Everything here is Gaussian
//! conditioning in various numerically safe arrangements:
//!
//! * [`posterior_unconstrained`]: q×q whitened solve (low-rank / Woodbury
//!   arrangement of the normal equations);
//! * [`posterior_unconstrained_direct`]: n×n arrangement, kept as the
//!   algebraically independent reference path;
//! * [`posterior_constrained`]: block elimination of the stacked system
//!   `[Ψ_A; Ψ_B]` with noise `diag(σ²I, ε_c)` via the Schur complement;
//! * [`map_lagrange`]: closed-form Lagrange-multiplier solution of the
//!   equality-constrained quadratic objective (coincides with the
//!   constrained posterior mean);
//! * [`posterior_dense_oracle`]: dense-grid direct-operator reference that
//!   skips the basis expansion entirely (test/validation use).

use nalgebra::{DMatrix, DVector};

use crate::basis::{constraint_row, phi_matrix, BasisExpansion};
use crate::error::{Error, Result};
use crate::grid::SizeGrid;
use crate::kernel::{covariance, KernelHyperparams};
use crate::linalg::{symmetrize, CholeskyGuard};

/// Output covariance storage: full matrix up to this many grid points,
/// diagonal-only above.
pub const MAX_FULL_COVARIANCE: usize = 1024;

/// Largest grid the dense oracle accepts.
pub const DENSE_ORACLE_MAX_POINTS: usize = 512;

/// Projected forward and constraint operators plus the noise model.
#[derive(Debug, Clone)]
pub struct ForwardOperators {
    /// Measurement projection `Ψ_A` (n × q).
    pub psi_a: DMatrix<f64>,
    /// Constraint row `Ψ_B` stored as a length-q vector `h`.
    pub psi_b: DVector<f64>,
    /// Measurement noise standard deviation, `> 0`.
    pub sigma_noise: f64,
    /// Constraint observation variance `ε_c >= 0` (0 = exact constraint).
    pub constraint_jitter: f64,
}

impl ForwardOperators {
    pub fn new(
        psi_a: DMatrix<f64>,
        psi_b: DVector<f64>,
        sigma_noise: f64,
        constraint_jitter: f64,
    ) -> Result<Self> {
        if psi_a.ncols() != psi_b.len() {
            return Err(Error::dimension(format!(
                "psi_A has {} columns but psi_B has {} entries",
                psi_a.ncols(),
                psi_b.len()
            )));
        }
        if !(sigma_noise > 0.0) {
            return Err(Error::domain(format!(
                "sigma_noise must be positive, got {sigma_noise}"
            )));
        }
        if !(constraint_jitter >= 0.0) {
            return Err(Error::domain(format!(
                "constraint jitter must be nonnegative, got {constraint_jitter}"
            )));
        }
        if psi_b.norm() == 0.0 {
            return Err(Error::domain("constraint row psi_B must be nonzero"));
        }
        Ok(ForwardOperators {
            psi_a,
            psi_b,
            sigma_noise,
            constraint_jitter,
        })
    }

    /// Assembles operators from a kernel matrix and an expansion: `Ψ_A` by
    /// quadrature projection of the rows of `A`, `Ψ_B` as the quadrature
    /// constraint row on the same grid.
    pub fn assemble(
        a_matrix: &DMatrix<f64>,
        grid: &SizeGrid,
        expansion: &BasisExpansion,
        sigma_noise: f64,
        constraint_jitter: f64,
    ) -> Result<Self> {
        let phi_quad = phi_matrix(expansion, grid.radii())?;
        let psi_a = project_forward(a_matrix, &phi_quad, grid.weights())?;
        let psi_b = DVector::from_vec(constraint_row(expansion, grid)?);
        ForwardOperators::new(psi_a, psi_b, sigma_noise, constraint_jitter)
    }

    pub fn n_measurements(&self) -> usize {
        self.psi_a.nrows()
    }

    pub fn q(&self) -> usize {
        self.psi_a.ncols()
    }
}

/// Posterior covariance over the output grid.
#[derive(Debug, Clone)]
pub enum CovarianceRepr {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl CovarianceRepr {
    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            CovarianceRepr::Full(m) => m.diagonal(),
            CovarianceRepr::Diagonal(d) => d.clone(),
        }
    }
}

/// Result of a posterior or MAP computation on an output grid.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    /// Basis coefficients (absent for the dense oracle, which has no basis).
    pub alpha_mean: Option<DVector<f64>>,
    /// Lagrange multiplier of the MAP solution (absent for posterior paths).
    pub lagrange_c: Option<f64>,
    /// Output radius grid.
    pub radii: Vec<f64>,
    /// Posterior mean of the density on the output grid.
    pub rho_mean: DVector<f64>,
    /// Posterior covariance (full or diagonal; see [`MAX_FULL_COVARIANCE`]).
    pub rho_cov: CovarianceRepr,
    /// Quadrature of `rho_mean` over the output grid.
    pub sum_rho: f64,
}

impl PosteriorResult {
    /// Pointwise credible bands `mean ± z sqrt(var)` (negative variances
    /// from rounding are clamped to zero).
    pub fn credible_bands(&self, z: f64) -> (Vec<f64>, Vec<f64>) {
        let diag = self.rho_cov.diagonal();
        let mut lo = Vec::with_capacity(diag.len());
        let mut hi = Vec::with_capacity(diag.len());
        for i in 0..diag.len() {
            let half = z * diag[i].max(0.0).sqrt();
            lo.push(self.rho_mean[i] - half);
            hi.push(self.rho_mean[i] + half);
        }
        (lo, hi)
    }

    /// Fraction of absolute mass carried by negative excursions of the mean,
    /// `∫ max(-ρ, 0) / ∫ |ρ|`. Diagnostic only; the estimate is not clipped.
    pub fn negative_mass_fraction(&self, weights: &[f64]) -> f64 {
        let mut neg = 0.0;
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate().take(self.rho_mean.len()) {
            neg += w * (-self.rho_mean[i]).max(0.0);
            total += w * self.rho_mean[i].abs();
        }
        if total > 0.0 {
            neg / total
        } else {
            0.0
        }
    }
}

/// Quadrature projection `Ψ_A[i][j] = Σ_k A[i][k] Φ[k][j] Δr_k`.
pub fn project_forward(
    a_matrix: &DMatrix<f64>,
    phi_on_quadrature: &DMatrix<f64>,
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    if a_matrix.ncols() != phi_on_quadrature.nrows() || a_matrix.ncols() != weights.len() {
        return Err(Error::dimension(format!(
            "project_forward: A is {}x{}, Phi is {}x{}, weights has {} entries",
            a_matrix.nrows(),
            a_matrix.ncols(),
            phi_on_quadrature.nrows(),
            phi_on_quadrature.ncols(),
            weights.len()
        )));
    }
    let mut weighted = phi_on_quadrature.clone();
    for (k, &w) in weights.iter().enumerate() {
        weighted.row_mut(k).scale_mut(w);
    }
    Ok(a_matrix * weighted)
}

/// Predicted measurements `μ̂ = Ψ_A α`.
pub fn predict_measurements(ops: &ForwardOperators, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    if alpha.len() != ops.q() {
        return Err(Error::dimension(format!(
            "alpha has {} entries, psi_A expects {}",
            alpha.len(),
            ops.q()
        )));
    }
    Ok(&ops.psi_a * alpha)
}

/// Prior variance `Σ_j Λ_j φ_j(r)²` at each output radius.
pub fn prior_variance(expansion: &BasisExpansion, radii: &[f64]) -> Result<Vec<f64>> {
    let phi = phi_matrix(expansion, radii)?;
    let lam = expansion.lambda_diag();
    Ok((0..radii.len())
        .map(|i| {
            (0..expansion.q())
                .map(|j| lam[j] * phi[(i, j)] * phi[(i, j)])
                .sum()
        })
        .collect())
}

fn columns_scaled(m: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, &s) in scale.iter().enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    out
}

fn finish(
    alpha: Option<DVector<f64>>,
    lagrange_c: Option<f64>,
    out_grid: &SizeGrid,
    rho_mean: DVector<f64>,
    cov_alpha: Option<&DMatrix<f64>>,
    phi_out: Option<&DMatrix<f64>>,
    rho_cov_direct: Option<DMatrix<f64>>,
) -> Result<PosteriorResult> {
    let sum_rho = out_grid.integrate(rho_mean.as_slice())?;
    let rho_cov = match (cov_alpha, phi_out, rho_cov_direct) {
        (Some(sigma_alpha), Some(phi), None) => {
            if out_grid.len() <= MAX_FULL_COVARIANCE {
                let mut full = phi * sigma_alpha * phi.transpose();
                symmetrize(&mut full);
                CovarianceRepr::Full(full)
            } else {
                let t = phi * sigma_alpha;
                let diag = DVector::from_fn(out_grid.len(), |i, _| t.row(i).dot(&phi.row(i)));
                CovarianceRepr::Diagonal(diag)
            }
        }
        (None, None, Some(mut full)) => {
            symmetrize(&mut full);
            CovarianceRepr::Full(full)
        }
        _ => CovarianceRepr::Diagonal(DVector::zeros(out_grid.len())),
    };
    Ok(PosteriorResult {
        alpha_mean: alpha,
        lagrange_c,
        radii: out_grid.radii().to_vec(),
        rho_mean,
        rho_cov,
        sum_rho,
    })
}

/// Unconstrained posterior via the whitened q×q normal equations.
///
/// With `B = Ψ_A Λ^{1/2}`, the coefficient posterior is
/// `Cov[α|μ] = Λ^{1/2} (σ⁻² BᵀB + I)⁻¹ Λ^{1/2}` and
/// `E[α|μ] = Cov[α|μ] σ⁻² Ψ_Aᵀ μ`, which is the low-rank (Woodbury)
/// arrangement of the posterior without ever inverting `Λ`.
pub fn posterior_unconstrained(
    ops: &ForwardOperators,
    expansion: &BasisExpansion,
    out_grid: &SizeGrid,
    mu: &DVector<f64>,
) -> Result<PosteriorResult> {
    check_mu(ops, mu)?;
    let q = ops.q();
    let lam = expansion.lambda_diag();
    let sqrt_lam: Vec<f64> = lam.iter().map(|&v| v.sqrt()).collect();
    let inv_s2 = 1.0 / (ops.sigma_noise * ops.sigma_noise);

    let b = columns_scaled(&ops.psi_a, &sqrt_lam);
    let mut m_beta = b.transpose() * &b * inv_s2;
    for j in 0..q {
        m_beta[(j, j)] += 1.0;
    }
    let chol = CholeskyGuard::new(&m_beta, "whitened normal equations")?;

    let rhs = b.transpose() * mu * inv_s2;
    let beta = chol.solve_vec(&rhs);
    let alpha = DVector::from_fn(q, |j, _| sqrt_lam[j] * beta[j]);

    // rho covariance = (Φ S) M⁻¹ (S Φᵀ) with S = diag(sqrt_lam), solved
    // directly against the output projection instead of materializing M⁻¹.
    let phi_out = phi_matrix(expansion, out_grid.radii())?;
    let w = columns_scaled(&phi_out, &sqrt_lam);
    let x = chol.solve_mat(&w.transpose());
    let rho_mean = &phi_out * &alpha;
    let sum_rho = out_grid.integrate(rho_mean.as_slice())?;
    let rho_cov = if out_grid.len() <= MAX_FULL_COVARIANCE {
        let mut full = &w * &x;
        symmetrize(&mut full);
        CovarianceRepr::Full(full)
    } else {
        CovarianceRepr::Diagonal(DVector::from_fn(out_grid.len(), |i, _| {
            w.row(i).dot(&x.column(i).transpose())
        }))
    };
    Ok(PosteriorResult {
        alpha_mean: Some(alpha),
        lagrange_c: None,
        radii: out_grid.radii().to_vec(),
        rho_mean,
        rho_cov,
        sum_rho,
    })
}

/// Unconstrained posterior via the n×n arrangement
/// `E[ρ|μ] = Φ Λ Ψ_Aᵀ (Ψ_A Λ Ψ_Aᵀ + σ²I)⁻¹ μ`.
///
/// Reference path for validating [`posterior_unconstrained`]; the two agree
/// to solver precision by the matrix-inversion identity.
pub fn posterior_unconstrained_direct(
    ops: &ForwardOperators,
    expansion: &BasisExpansion,
    out_grid: &SizeGrid,
    mu: &DVector<f64>,
) -> Result<PosteriorResult> {
    check_mu(ops, mu)?;
    let lam = expansion.lambda_diag();
    let la = columns_scaled(&ops.psi_a, lam); // Ψ_A Λ
    let n = ops.n_measurements();
    let mut gram = &la * ops.psi_a.transpose();
    let s2 = ops.sigma_noise * ops.sigma_noise;
    for i in 0..n {
        gram[(i, i)] += s2;
    }
    let chol = CholeskyGuard::new(&gram, "measurement-space gram")?;

    let alpha = la.transpose() * chol.solve_vec(mu);
    let mut cov_alpha = DMatrix::from_diagonal(&DVector::from_row_slice(lam));
    cov_alpha -= la.transpose() * chol.solve_mat(&la);
    symmetrize(&mut cov_alpha);

    let phi_out = phi_matrix(expansion, out_grid.radii())?;
    let rho_mean = &phi_out * &alpha;
    finish(
        Some(alpha),
        None,
        out_grid,
        rho_mean,
        Some(&cov_alpha),
        Some(&phi_out),
        None,
    )
}

/// Coefficient posterior conditioned on measurements and `m` constraint
/// observations (rows of `c_rows`, observed values `c_values`, each with
/// variance `eps_c`). Block elimination with the measurement gram factored
/// once and the m×m constraint Schur complement handled separately.
fn constrained_coefficient_posterior(
    ops: &ForwardOperators,
    lam: &[f64],
    mu: &DVector<f64>,
    c_rows: &DMatrix<f64>,
    c_values: &DVector<f64>,
    eps_c: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = ops.n_measurements();
    let q = ops.q();
    let m = c_rows.nrows();
    let s2 = ops.sigma_noise * ops.sigma_noise;

    let la = columns_scaled(&ops.psi_a, lam); // Ψ_A Λ, n×q
    let lc = columns_scaled(c_rows, lam); // C Λ, m×q

    // P = Ψ_A Λ Ψ_Aᵀ + σ²I and its solves.
    let (p_inv_mu, p_inv_qmat, p_inv_la) = if n > 0 {
        let mut p = &la * ops.psi_a.transpose();
        for i in 0..n {
            p[(i, i)] += s2;
        }
        let chol = CholeskyGuard::new(&p, "measurement block")?;
        let qmat = &la * c_rows.transpose(); // n×m, cross block Ψ_A Λ Cᵀ
        (
            chol.solve_vec(mu),
            chol.solve_mat(&qmat),
            chol.solve_mat(&la),
        )
    } else {
        (
            DVector::zeros(0),
            DMatrix::zeros(0, m),
            DMatrix::zeros(0, q),
        )
    };

    // Constraint Schur complement S_c = C Λ Cᵀ + ε_c I − Qᵀ P⁻¹ Q.
    let qmat = &la * c_rows.transpose();
    let mut s_c = &lc * c_rows.transpose();
    for i in 0..m {
        s_c[(i, i)] += eps_c;
    }
    if n > 0 {
        s_c -= qmat.transpose() * &p_inv_qmat;
    }
    let schur = CholeskyGuard::new(&s_c, "constraint Schur block").map_err(|e| {
        Error::numeric(format!(
            "{e}; consider raising the constraint jitter eps_c above {eps_c:.1e}"
        ))
    })?;

    // Mean: w = Σ_yy⁻¹ [μ; c_values] blockwise, then α = Λ Ψᵀ w.
    let resid = c_values - qmat.transpose() * &p_inv_mu;
    let w2 = schur.solve_vec(&resid);
    let alpha = if n > 0 {
        let w1 = &p_inv_mu - &p_inv_qmat * &w2;
        la.transpose() * w1 + lc.transpose() * &w2
    } else {
        lc.transpose() * &w2
    };

    // Covariance: Λ − Uᵀ Σ_yy⁻¹ U with U = [Ψ_A Λ; C Λ].
    let row2 = schur.solve_mat(&(&lc - qmat.transpose() * &p_inv_la));
    let mut cov = DMatrix::from_diagonal(&DVector::from_row_slice(lam));
    if n > 0 {
        let v1 = &p_inv_la - &p_inv_qmat * &row2;
        cov -= la.transpose() * v1;
    }
    cov -= lc.transpose() * row2;
    symmetrize(&mut cov);
    Ok((alpha, cov))
}

/// Posterior conditioned on measurements and the normalization constraint.
///
/// Stacks `Ψ = [Ψ_A; Ψ_B]` with noise `diag(σ²I, ε_c)` and conditions the
/// joint Gaussian, eliminating the measurement block through its Cholesky
/// factor and the constraint through the scalar Schur complement. With
/// `ε_c = 0` the constraint is exact and `Ψ_B α = 1` holds to solver
/// precision.
pub fn posterior_constrained(
    ops: &ForwardOperators,
    expansion: &BasisExpansion,
    out_grid: &SizeGrid,
    mu: &DVector<f64>,
) -> Result<PosteriorResult> {
    check_mu(ops, mu)?;
    let c_rows = DMatrix::from_fn(1, ops.q(), |_, j| ops.psi_b[j]);
    let (alpha, cov_alpha) = constrained_coefficient_posterior(
        ops,
        expansion.lambda_diag(),
        mu,
        &c_rows,
        &DVector::from_element(1, 1.0),
        ops.constraint_jitter,
    )?;
    let phi_out = phi_matrix(expansion, out_grid.radii())?;
    let rho_mean = &phi_out * &alpha;
    finish(
        Some(alpha),
        None,
        out_grid,
        rho_mean,
        Some(&cov_alpha),
        Some(&phi_out),
        None,
    )
}

/// Lagrange-multiplier MAP estimate of the constrained objective
/// `(1/2σ²)‖μ − Ψ_A α‖² + ½ αᵀΛ⁻¹α + c (hᵀα − 1)`.
///
/// Solves `c = (σ⁻² hᵀM⁻¹Ψ_Aᵀμ − 1) / (hᵀM⁻¹h)` and
/// `α = M⁻¹(σ⁻²Ψ_Aᵀμ − c h)` with `M = σ⁻²Ψ_AᵀΨ_A + Λ⁻¹` applied through
/// `M⁻¹ = Λ − ΛΨ_Aᵀ(σ²I + Ψ_AΛΨ_Aᵀ)⁻¹Ψ_AΛ`, so `Λ` is never inverted.
/// Returns a point estimate: the covariance is zero.
pub fn map_lagrange(
    ops: &ForwardOperators,
    expansion: &BasisExpansion,
    out_grid: &SizeGrid,
    mu: &DVector<f64>,
) -> Result<PosteriorResult> {
    check_mu(ops, mu)?;
    let n = ops.n_measurements();
    let lam = expansion.lambda_diag();
    let la = columns_scaled(&ops.psi_a, lam);
    let s2 = ops.sigma_noise * ops.sigma_noise;

    let chol = if n > 0 {
        let mut p = &la * ops.psi_a.transpose();
        for i in 0..n {
            p[(i, i)] += s2;
        }
        Some(CholeskyGuard::new(&p, "measurement block")?)
    } else {
        None
    };
    let minv = |v: &DVector<f64>| -> DVector<f64> {
        let direct = DVector::from_fn(v.len(), |j, _| lam[j] * v[j]);
        match &chol {
            Some(c) => &direct - la.transpose() * c.solve_vec(&(&la * v)),
            None => direct,
        }
    };

    let z_mu = minv(&(ops.psi_a.transpose() * mu));
    let z_h = minv(&ops.psi_b);
    let denom = ops.psi_b.dot(&z_h);
    if !(denom > 0.0) {
        return Err(Error::numeric(format!(
            "hᵀM⁻¹h = {denom:.3e} is not positive; the prior diagonal is degenerate"
        )));
    }
    let c = (ops.psi_b.dot(&z_mu) / s2 - 1.0) / denom;
    let alpha = z_mu / s2 - &z_h * c;

    let phi_out = phi_matrix(expansion, out_grid.radii())?;
    let rho_mean = &phi_out * &alpha;
    finish(Some(alpha), Some(c), out_grid, rho_mean, None, None, None)
}

/// Dense-grid direct-operator posterior: builds the full Gram matrix of the
/// kernel on the grid, discretizes the measurement and constraint operators
/// by quadrature, and conditions with explicit Schur-complement block
/// elimination. Reference implementation for validating the basis paths;
/// refuses grids larger than [`DENSE_ORACLE_MAX_POINTS`].
pub fn posterior_dense_oracle(
    kernel: &KernelHyperparams,
    a_matrix: &DMatrix<f64>,
    grid: &SizeGrid,
    mu: &DVector<f64>,
    sigma_noise: f64,
    constrained: bool,
    constraint_jitter: f64,
) -> Result<PosteriorResult> {
    let p = grid.len();
    if p > DENSE_ORACLE_MAX_POINTS {
        return Err(Error::domain(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_POINTS} grid points, got {p}"
        )));
    }
    if a_matrix.ncols() != p {
        return Err(Error::dimension(format!(
            "kernel matrix has {} columns but the grid has {p} points",
            a_matrix.ncols()
        )));
    }
    if a_matrix.nrows() != mu.len() {
        return Err(Error::dimension(format!(
            "kernel matrix has {} rows but mu has {} entries",
            a_matrix.nrows(),
            mu.len()
        )));
    }
    if !(sigma_noise > 0.0) {
        return Err(Error::domain("sigma_noise must be positive"));
    }

    let radii = grid.radii();
    let gram = DMatrix::from_fn(p, p, |i, j| covariance(kernel, radii[i], radii[j]).unwrap());

    // Quadrature discretizations: measurement rows A·diag(w), constraint wᵀ.
    let mut a_hat = a_matrix.clone();
    for (k, &w) in grid.weights().iter().enumerate() {
        a_hat.column_mut(k).scale_mut(w);
    }
    let b_row = DVector::from_row_slice(grid.weights());

    let n = mu.len();
    let s2 = sigma_noise * sigma_noise;
    let ka = &gram * a_hat.transpose(); // p×n
    let kb = &gram * &b_row; // p

    let mut p_block = &a_hat * &ka;
    for i in 0..n {
        p_block[(i, i)] += s2;
    }
    let chol = CholeskyGuard::new(&p_block, "dense oracle measurement block")?;

    let (rho_mean, rho_cov) = if constrained {
        let q_vec = &a_hat * &kb; // n
        let s_scalar = b_row.dot(&kb) + constraint_jitter;
        let p_inv_mu = chol.solve_vec(mu);
        let p_inv_q = chol.solve_vec(&q_vec);
        let s_c = s_scalar - q_vec.dot(&p_inv_q);
        if !(s_c > 0.0) {
            return Err(Error::numeric(format!(
                "dense oracle constraint Schur complement {s_c:.3e} is not positive; raise eps_c"
            )));
        }
        let w2 = (1.0 - q_vec.dot(&p_inv_mu)) / s_c;
        let w1 = &p_inv_mu - &p_inv_q * w2;
        let mean = &ka * w1 + &kb * w2;

        // Cov = K − [Ka Kb] Σ_yy⁻¹ [Ka Kb]ᵀ, blockwise.
        let p_inv_kat = chol.solve_mat(&ka.transpose()); // n×p
        let row2 = (kb.transpose() - q_vec.transpose() * &p_inv_kat) / s_c; // 1×p
        let v1 = &p_inv_kat - &p_inv_q * &row2; // n×p
        let cov = &gram - &ka * v1 - &kb * row2;
        (mean, cov)
    } else {
        let mean = &ka * chol.solve_vec(mu);
        let cov = &gram - &ka * chol.solve_mat(&ka.transpose());
        (mean, cov)
    };

    finish(None, None, grid, rho_mean, None, None, Some(rho_cov))
}

fn check_mu(ops: &ForwardOperators, mu: &DVector<f64>) -> Result<()> {
    if mu.len() != ops.n_measurements() {
        return Err(Error::dimension(format!(
            "mu has {} entries but psi_A has {} rows",
            mu.len(),
            ops.n_measurements()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_expansion, DomainSpec};
    use crate::kernel::KernelHyperparams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
        ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    struct Instance {
        ops: ForwardOperators,
        expansion: BasisExpansion,
        grid: SizeGrid,
        mu: DVector<f64>,
    }

    /// Random well-behaved instance: synthetic smooth forward matrix, SE
    /// prior, data drawn from the prior plus noise.
    fn random_instance(seed: u64, n: usize, q: usize, sigma: f64) -> Instance {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 48).unwrap();
        let domain = DomainSpec::new(0.05, 0.5, 1.0).unwrap();
        let kernel = KernelHyperparams::se(1.0 + uniform(&mut rng), 0.1).unwrap();
        let expansion = build_expansion(&domain, q, &kernel).unwrap();

        // Smooth synthetic kernel rows (mix of decaying exponentials).
        let p = grid.len();
        let mut a = DMatrix::zeros(n, p);
        for i in 0..n {
            let scale = 0.5 + uniform(&mut rng);
            let rate = 1.0 + 8.0 * uniform(&mut rng);
            for k in 0..p {
                let r = grid.radii()[k];
                a[(i, k)] = scale * (-rate * r).exp() + 0.2 * (r * (i + 1) as f64).sin().abs();
            }
        }
        let ops = ForwardOperators::assemble(&a, &grid, &expansion, sigma, 0.0).unwrap();
        let mut mu = DVector::zeros(n);
        for i in 0..n {
            mu[i] = 2.0 * uniform(&mut rng) - 1.0;
        }
        Instance {
            ops,
            expansion,
            grid,
            mu,
        }
    }

    #[test]
    fn project_forward_matches_triple_loop() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let (n, p, q) = (4, 6, 3);
        let a = DMatrix::from_fn(n, p, |_, _| uniform(&mut rng));
        let phi = DMatrix::from_fn(p, q, |_, _| uniform(&mut rng) - 0.5);
        let w: Vec<f64> = (0..p).map(|_| uniform(&mut rng)).collect();
        let psi = project_forward(&a, &phi, &w).unwrap();
        for i in 0..n {
            for j in 0..q {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += a[(i, k)] * phi[(k, j)] * w[k];
                }
                assert_abs_diff_eq!(psi[(i, j)], acc, epsilon = 1e-12);
            }
        }
        // Zero kernel projects to zero.
        let zero = project_forward(&DMatrix::zeros(n, p), &phi, &w).unwrap();
        assert_eq!(zero.amax(), 0.0);
        // 1×1×1 reduces to a scalar product.
        let s = project_forward(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 3.0),
            &[0.5],
        )
        .unwrap();
        assert_eq!(s[(0, 0)], 3.0);
        // Shape mismatch is a dimension error.
        assert!(matches!(
            project_forward(&a, &phi, &w[..p - 1]).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn unconstrained_zero_data_keeps_prior() {
        let inst = random_instance(1, 8, 16, 0.05);
        let mu = DVector::zeros(8);
        let post = posterior_unconstrained(&inst.ops, &inst.expansion, &inst.grid, &mu).unwrap();
        assert_eq!(post.rho_mean.amax(), 0.0);
        let prior = prior_variance(&inst.expansion, inst.grid.radii()).unwrap();
        let diag = post.rho_cov.diagonal();
        for i in 0..diag.len() {
            assert!(
                diag[i] <= prior[i] + 1e-10,
                "posterior variance must contract"
            );
            assert!(diag[i] >= -1e-10);
        }
    }

    #[test]
    fn unconstrained_infinite_noise_recovers_prior_mean() {
        let inst = random_instance(2, 8, 16, 0.05);
        let sigma_f = inst.expansion.kernel().sigma_f;
        let huge = ForwardOperators::new(
            inst.ops.psi_a.clone(),
            inst.ops.psi_b.clone(),
            1e6 * inst.mu.norm(),
            0.0,
        )
        .unwrap();
        let post = posterior_unconstrained(&huge, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        assert!(post.rho_mean.amax() <= 1e-3 * sigma_f);
    }

    #[test]
    fn woodbury_and_direct_paths_agree() {
        for seed in 0..6 {
            let (n, q) = if seed % 2 == 0 { (8, 4) } else { (64, 32) };
            let inst = random_instance(seed, n, q, 0.1);
            let a =
                posterior_unconstrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
            let b =
                posterior_unconstrained_direct(&inst.ops, &inst.expansion, &inst.grid, &inst.mu)
                    .unwrap();
            let mean_diff = (&a.rho_mean - &b.rho_mean).amax();
            assert!(mean_diff <= 1e-8, "mean diff {mean_diff} at seed {seed}");
            match (&a.rho_cov, &b.rho_cov) {
                (CovarianceRepr::Full(x), CovarianceRepr::Full(y)) => {
                    assert!((x - y).amax() <= 1e-8);
                }
                _ => panic!("expected full covariances"),
            }
        }
    }

    #[test]
    fn constrained_posterior_satisfies_constraint() {
        let inst = random_instance(3, 8, 12, 0.05);
        let post = posterior_constrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let alpha = post.alpha_mean.as_ref().unwrap();
        let hta = inst.ops.psi_b.dot(alpha);
        assert_abs_diff_eq!(hta, 1.0, epsilon = 1e-8);
        // Quadrature constraint row makes the gridded sum exact as well.
        assert_abs_diff_eq!(post.sum_rho, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn constraint_only_posterior_is_minimum_energy_solution() {
        let inst = random_instance(4, 0, 10, 0.05);
        let mu = DVector::zeros(0);
        let post = posterior_constrained(&inst.ops, &inst.expansion, &inst.grid, &mu).unwrap();
        let lam = inst.expansion.lambda_diag();
        let h = &inst.ops.psi_b;
        let hlh: f64 = (0..10).map(|j| lam[j] * h[j] * h[j]).sum();
        let alpha = post.alpha_mean.as_ref().unwrap();
        for j in 0..10 {
            assert_relative_eq!(alpha[j], lam[j] * h[j] / hlh, max_relative = 1e-10);
        }
        assert_abs_diff_eq!(post.sum_rho, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn duplicated_constraint_rows_are_idempotent() {
        let inst = random_instance(5, 8, 12, 0.05);
        let lam = inst.expansion.lambda_diag();
        let single = constrained_coefficient_posterior(
            &inst.ops,
            lam,
            &inst.mu,
            &DMatrix::from_fn(1, 12, |_, j| inst.ops.psi_b[j]),
            &DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap();
        let sigma_f = inst.expansion.kernel().sigma_f;
        let doubled = constrained_coefficient_posterior(
            &inst.ops,
            lam,
            &inst.mu,
            &DMatrix::from_fn(2, 12, |_, j| inst.ops.psi_b[j]),
            &DVector::from_element(2, 1.0),
            1e-14 * sigma_f * sigma_f,
        )
        .unwrap();
        assert!((&single.0 - &doubled.0).amax() <= 1e-8);
        assert!((&single.1 - &doubled.1).amax() <= 1e-8);
    }

    #[test]
    fn constraint_jitter_keeps_residual_within_contract() {
        let inst = random_instance(7, 8, 12, 0.05);
        let sigma_f = inst.expansion.kernel().sigma_f;
        let eps = 1e-12 * sigma_f * sigma_f;
        let soft = ForwardOperators::new(
            inst.ops.psi_a.clone(),
            inst.ops.psi_b.clone(),
            inst.ops.sigma_noise,
            eps,
        )
        .unwrap();
        let post = posterior_constrained(&soft, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let resid = (inst.ops.psi_b.dot(post.alpha_mean.as_ref().unwrap()) - 1.0).abs();
        assert!(
            resid <= (1e-8f64).max(10.0 * eps),
            "softened-constraint residual {resid:.3e}"
        );
    }

    #[test]
    fn constraint_contracts_variance() {
        let inst = random_instance(6, 10, 16, 0.05);
        let unc =
            posterior_unconstrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let con = posterior_constrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let du = unc.rho_cov.diagonal();
        let dc = con.rho_cov.diagonal();
        let prior = prior_variance(&inst.expansion, inst.grid.radii()).unwrap();
        for i in 0..du.len() {
            assert!(
                dc[i] <= du[i] + 1e-10,
                "constraint must not add variance at {i}"
            );
            assert!(dc[i] <= prior[i] + 1e-10);
            assert!(dc[i] >= -1e-10 && du[i] >= -1e-10);
        }
    }

    #[test]
    fn map_matches_constrained_posterior_mean() {
        for seed in 10..16 {
            let inst = random_instance(seed, 8, 12, 0.07);
            let map = map_lagrange(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
            let post =
                posterior_constrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
            let d = (map.alpha_mean.as_ref().unwrap() - post.alpha_mean.as_ref().unwrap()).amax();
            assert!(d <= 1e-8, "MAP/mean gap {d} at seed {seed}");
            let hta = inst.ops.psi_b.dot(map.alpha_mean.as_ref().unwrap());
            assert_abs_diff_eq!(hta, 1.0, epsilon = 1e-10);
            assert!(map.lagrange_c.is_some());
        }
    }

    #[test]
    fn map_multiplier_vanishes_when_constraint_is_inactive() {
        let inst = random_instance(20, 8, 12, 0.05);
        // Scale mu so the unconstrained optimum already integrates to one.
        let unc =
            posterior_unconstrained(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let hta = inst.ops.psi_b.dot(unc.alpha_mean.as_ref().unwrap());
        let mu_scaled = &inst.mu / hta;
        let map = map_lagrange(&inst.ops, &inst.expansion, &inst.grid, &mu_scaled).unwrap();
        assert_abs_diff_eq!(map.lagrange_c.unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn joint_prior_noise_rescale_leaves_map_unchanged() {
        // Scaling σ² and the prior diagonal by the same factor preserves α
        // and divides the multiplier by that factor.
        let inst = random_instance(21, 8, 12, 0.05);
        let s = 10.0;
        let map1 = map_lagrange(&inst.ops, &inst.expansion, &inst.grid, &inst.mu).unwrap();
        let kernel = *inst.expansion.kernel();
        let scaled_kernel = kernel.with_sigma_ell(kernel.sigma_f * s, kernel.ell);
        let scaled_exp = inst.expansion.with_kernel(scaled_kernel).unwrap();
        let scaled_ops = ForwardOperators::new(
            inst.ops.psi_a.clone(),
            inst.ops.psi_b.clone(),
            inst.ops.sigma_noise * s,
            0.0,
        )
        .unwrap();
        let map2 = map_lagrange(&scaled_ops, &scaled_exp, &inst.grid, &inst.mu).unwrap();
        let d = (map1.alpha_mean.as_ref().unwrap() - map2.alpha_mean.as_ref().unwrap()).amax();
        assert!(d <= 1e-10, "alpha changed by {d} under joint rescale");
        assert_relative_eq!(
            map1.lagrange_c.unwrap(),
            map2.lagrange_c.unwrap() * s * s,
            max_relative = 1e-8
        );
    }

    #[test]
    fn predict_measurements_is_linear() {
        let inst = random_instance(30, 6, 8, 0.05);
        let zero = predict_measurements(&inst.ops, &DVector::zeros(8)).unwrap();
        assert_eq!(zero.amax(), 0.0);
        let a1 = DVector::from_fn(8, |j, _| (j + 1) as f64);
        let a2 = DVector::from_fn(8, |j, _| ((j * j) as f64).sin());
        let lhs = predict_measurements(&inst.ops, &(&a1 + &a2)).unwrap();
        let rhs = predict_measurements(&inst.ops, &a1).unwrap()
            + predict_measurements(&inst.ops, &a2).unwrap();
        assert!((lhs - rhs).amax() <= 1e-12);
        assert!(predict_measurements(&inst.ops, &DVector::zeros(3)).is_err());
    }

    /// Generic conditioning of the explicit stacked Gaussian, used as the
    /// textbook reference for the dense oracle.
    fn condition_stacked(
        gram: &DMatrix<f64>,
        h: &DMatrix<f64>,
        noise_diag: &DVector<f64>,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let cross = gram * h.transpose(); // p×n
        let mut syy = h * &cross;
        for i in 0..noise_diag.len() {
            syy[(i, i)] += noise_diag[i];
        }
        let inv = syy.clone().try_inverse().unwrap();
        let mean = &cross * &inv * y;
        let cov = gram - &cross * inv * cross.transpose();
        (mean, cov)
    }

    #[test]
    fn dense_oracle_matches_textbook_conditioning() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(40);
        let grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 24).unwrap();
        let kernel = KernelHyperparams::se(1.0, 0.12).unwrap();
        let n = 6;
        let a = DMatrix::from_fn(n, grid.len(), |_, _| uniform(&mut rng));
        let mu = DVector::from_fn(n, |_, _| uniform(&mut rng) - 0.5);
        let sigma = 0.1;

        let oracle = posterior_dense_oracle(&kernel, &a, &grid, &mu, sigma, false, 0.0).unwrap();

        let mut a_hat = a.clone();
        for (k, &w) in grid.weights().iter().enumerate() {
            a_hat.column_mut(k).scale_mut(w);
        }
        let gram = DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
            covariance(&kernel, grid.radii()[i], grid.radii()[j]).unwrap()
        });
        let (mean, cov) =
            condition_stacked(&gram, &a_hat, &DVector::from_element(n, sigma * sigma), &mu);
        assert!((&oracle.rho_mean - &mean).amax() <= 1e-10);
        match &oracle.rho_cov {
            CovarianceRepr::Full(c) => assert!((c - cov).amax() <= 1e-10),
            _ => panic!("dense oracle must return a full covariance"),
        }
    }

    #[test]
    fn dense_oracle_constraint_only_normalizes() {
        let grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 32).unwrap();
        let kernel = KernelHyperparams::se(1.0, 0.1).unwrap();
        let a = DMatrix::zeros(0, grid.len());
        let mu = DVector::zeros(0);
        let post = posterior_dense_oracle(&kernel, &a, &grid, &mu, 0.01, true, 0.0).unwrap();
        assert_abs_diff_eq!(post.sum_rho, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn dense_oracle_refuses_large_grids() {
        let grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 600).unwrap();
        let kernel = KernelHyperparams::se(1.0, 0.1).unwrap();
        let a = DMatrix::zeros(1, 600);
        let mu = DVector::zeros(1);
        let err = posterior_dense_oracle(&kernel, &a, &grid, &mu, 0.01, true, 0.0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn basis_posterior_matches_dense_oracle_on_smooth_scenario() {
        // Wide embedding (c = 2) and a long length-scale make the q=64
        // truncation error negligible, so the two formulations coincide.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(50);
        let grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 60).unwrap();
        let domain = DomainSpec::new(0.05, 0.5, 2.0).unwrap();
        let kernel = KernelHyperparams::se(1.0, 0.09).unwrap();
        let expansion = build_expansion(&domain, 64, &kernel).unwrap();
        let n = 8;
        let a = DMatrix::from_fn(n, grid.len(), |i, k| {
            let r = grid.radii()[k];
            (-(1.0 + i as f64) * r).exp()
        });
        let mu = DVector::from_fn(n, |_, _| uniform(&mut rng));
        let sigma = 0.05;

        let ops = ForwardOperators::assemble(&a, &grid, &expansion, sigma, 0.0).unwrap();
        let basis_post = posterior_constrained(&ops, &expansion, &grid, &mu).unwrap();
        let dense_post = posterior_dense_oracle(&kernel, &a, &grid, &mu, sigma, true, 0.0).unwrap();
        let diff = (&basis_post.rho_mean - &dense_post.rho_mean).amax();
        assert!(diff <= 1e-6, "basis vs dense sup-norm {diff}");
    }

    #[test]
    fn large_output_grids_get_diagonal_covariance() {
        let inst = random_instance(60, 6, 8, 0.05);
        let big_grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 1100).unwrap();
        let post =
            posterior_unconstrained(&inst.ops, &inst.expansion, &big_grid, &inst.mu).unwrap();
        match &post.rho_cov {
            CovarianceRepr::Diagonal(d) => {
                assert_eq!(d.len(), 1100);
                // Diagonal path agrees with the full-path diagonal on a
                // grid just under the cutoff.
                let small_grid = SizeGrid::uniform_trapezoid(0.05, 0.5, 1024).unwrap();
                let full =
                    posterior_unconstrained(&inst.ops, &inst.expansion, &small_grid, &inst.mu)
                        .unwrap();
                assert!(matches!(full.rho_cov, CovarianceRepr::Full(_)));
            }
            CovarianceRepr::Full(_) => panic!("expected diagonal covariance above the cutoff"),
        }
        let (lo, hi) = post.credible_bands(1.96);
        for i in 0..lo.len() {
            assert!(hi[i] >= lo[i]);
        }
    }

    #[test]
    fn operator_validation() {
        let psi_a = DMatrix::zeros(3, 4);
        assert!(ForwardOperators::new(psi_a.clone(), DVector::zeros(4), 0.1, 0.0).is_err());
        assert!(
            ForwardOperators::new(psi_a.clone(), DVector::from_element(4, 1.0), 0.0, 0.0).is_err()
        );
        assert!(
            ForwardOperators::new(psi_a.clone(), DVector::from_element(4, 1.0), 0.1, -1.0).is_err()
        );
        assert!(ForwardOperators::new(psi_a, DVector::from_element(3, 1.0), 0.1, 0.0).is_err());
    }

    #[test]
    fn negative_mass_fraction_diagnostic() {
        let grid = SizeGrid::uniform_trapezoid(0.1, 0.5, 5).unwrap();
        let result = PosteriorResult {
            alpha_mean: None,
            lagrange_c: None,
            radii: grid.radii().to_vec(),
            rho_mean: DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0, 1.0]),
            rho_cov: CovarianceRepr::Diagonal(DVector::zeros(5)),
            sum_rho: 0.0,
        };
        let frac = result.negative_mass_fraction(grid.weights());
        assert!(frac > 0.0 && frac < 1.0);
    }
}
