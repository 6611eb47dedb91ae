//! Reduced-rank kernel expansion on a Dirichlet Laplace eigenbasis.
//!
//! A stationary prior `k(r, r')` is approximated by `Φ Λ Φᵀ`, where the
//! columns of `Φ` are sine eigenfunctions of the Laplace operator on the
//! interval `[-L, L]` (after centering the radius axis) and `Λ` is the
//! kernel spectral density evaluated at the eigenfrequencies. The basis
//! domain embeds the data domain: `L = c (r_max - r_min)` with `c >= 0.5`,
//! so with the default `c = 1` the Dirichlet boundaries sit half a data
//! width beyond each edge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SizeGrid;
use crate::kernel::{spectral_density, KernelHyperparams};

/// Prior diagonal entries below `max(Λ) * LAMBDA_FLOOR_REL` are clamped so
/// the diagonal stays strictly positive when the spectral density
/// underflows at high eigenfrequencies.
const LAMBDA_FLOOR_REL: f64 = 1e-280;

/// Radius interval and embedding factor for the eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub r_min: f64,
    pub r_max: f64,
    /// Basis half-width as a multiple of the data width: `L = c (r_max - r_min)`.
    pub half_width_factor: f64,
}

impl DomainSpec {
    pub fn new(r_min: f64, r_max: f64, half_width_factor: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::domain(format!(
                "invalid radius domain [{r_min}, {r_max}]"
            )));
        }
        if !(half_width_factor >= 0.5) {
            return Err(Error::domain(format!(
                "half-width factor must be >= 0.5 so the basis domain contains the data, got {half_width_factor}"
            )));
        }
        Ok(DomainSpec {
            r_min,
            r_max,
            half_width_factor,
        })
    }

    pub fn from_grid(grid: &SizeGrid, half_width_factor: f64) -> Result<Self> {
        Self::new(grid.r_min(), grid.r_max(), half_width_factor)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.r_min + self.r_max)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width_factor * (self.r_max - self.r_min)
    }
}

/// Dirichlet eigenvalue `λ_j = (jπ / 2L)²` for `j >= 1`.
pub fn eigenvalue(j: usize, half_width: f64) -> Result<f64> {
    if j < 1 {
        return Err(Error::domain("eigenfunction index starts at 1"));
    }
    if !(half_width > 0.0) {
        return Err(Error::domain(format!(
            "half-width must be positive, got {half_width}"
        )));
    }
    let freq = j as f64 * std::f64::consts::PI / (2.0 * half_width);
    Ok(freq * freq)
}

/// Eigenfunction `φ_j(x) = √(1/L) sin(jπ (x + L) / 2L)` on the centered
/// coordinate `x = r - center`, `|x| <= L`.
pub fn phi(j: usize, x: f64, half_width: f64) -> Result<f64> {
    if j < 1 {
        return Err(Error::domain("eigenfunction index starts at 1"));
    }
    if !(half_width > 0.0) {
        return Err(Error::domain(format!(
            "half-width must be positive, got {half_width}"
        )));
    }
    if x.abs() > half_width * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "coordinate {x} lies outside the basis domain [-{half_width}, {half_width}]"
        )));
    }
    let arg = j as f64 * std::f64::consts::PI * (x + half_width) / (2.0 * half_width);
    Ok((1.0 / half_width).sqrt() * arg.sin())
}

/// Truncated eigenbasis with its spectral prior diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisExpansion {
    q: usize,
    center: f64,
    half_width: f64,
    eigenvalues: Vec<f64>,
    lambda_diag: Vec<f64>,
    kernel: KernelHyperparams,
}

impl BasisExpansion {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Spectral prior diagonal `Λ_j = S(√λ_j)`.
    pub fn lambda_diag(&self) -> &[f64] {
        &self.lambda_diag
    }

    pub fn kernel(&self) -> &KernelHyperparams {
        &self.kernel
    }

    /// Rebuilds the prior diagonal for new kernel hyperparameters; the
    /// eigenbasis itself is unchanged.
    pub fn with_kernel(&self, kernel: KernelHyperparams) -> Result<Self> {
        let lambda_diag = lambda_from_eigenvalues(&self.eigenvalues, &kernel)?;
        Ok(BasisExpansion {
            lambda_diag,
            kernel,
            ..self.clone()
        })
    }
}

/// Spectral diagonal for the given eigenvalues, floored as documented on
/// [`BasisExpansion::lambda_diag`].
pub fn lambda_from_eigenvalues(
    eigenvalues: &[f64],
    kernel: &KernelHyperparams,
) -> Result<Vec<f64>> {
    let mut lambda: Vec<f64> = eigenvalues
        .iter()
        .map(|&ev| spectral_density(kernel, ev.sqrt()))
        .collect::<Result<_>>()?;
    let max = lambda.iter().cloned().fold(0.0f64, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::numeric(format!(
            "spectral diagonal degenerate (max {max}) for kernel {kernel:?}"
        )));
    }
    let floor = max * LAMBDA_FLOOR_REL;
    for v in &mut lambda {
        *v = v.max(floor);
    }
    Ok(lambda)
}

/// Builds the `q`-term expansion for a domain and kernel.
pub fn build_expansion(
    domain: &DomainSpec,
    q: usize,
    kernel: &KernelHyperparams,
) -> Result<BasisExpansion> {
    if q < 1 {
        return Err(Error::domain("expansion needs at least one basis function"));
    }
    kernel.validate()?;
    let half_width = domain.half_width();
    let eigenvalues: Vec<f64> = (1..=q)
        .map(|j| eigenvalue(j, half_width))
        .collect::<Result<_>>()?;
    let lambda_diag = lambda_from_eigenvalues(&eigenvalues, kernel)?;
    Ok(BasisExpansion {
        q,
        center: domain.center(),
        half_width,
        eigenvalues,
        lambda_diag,
        kernel: *kernel,
    })
}

/// Evaluation matrix `Φ[k][j] = φ_j(r_k - center)`.
pub fn phi_matrix(expansion: &BasisExpansion, radii: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(radii.len(), expansion.q);
    for (k, &r) in radii.iter().enumerate() {
        let x = r - expansion.center;
        if x.abs() > expansion.half_width * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "radius {r} (index {k}) lies outside the basis domain"
            )));
        }
        for j in 1..=expansion.q {
            m[(k, j - 1)] = phi(j, x, expansion.half_width)?;
        }
    }
    Ok(m)
}

/// Analytic integrals `∫_a^b φ_j(r - center) dr` for `j = 1..=q`.
pub fn basis_integral(expansion: &BasisExpansion, a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a < b) {
        return Err(Error::domain(format!(
            "integration bounds must satisfy a < b, got [{a}, {b}]"
        )));
    }
    let l = expansion.half_width;
    let xa = a - expansion.center;
    let xb = b - expansion.center;
    for (name, x) in [("a", xa), ("b", xb)] {
        if x.abs() > l * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "integration bound {name} lies outside the basis domain"
            )));
        }
    }
    let norm = (1.0 / l).sqrt();
    let mut out = Vec::with_capacity(expansion.q);
    for j in 1..=expansion.q {
        let jf = j as f64;
        let scale = 2.0 * l / (jf * std::f64::consts::PI);
        let pa = jf * std::f64::consts::PI * (xa + l) / (2.0 * l);
        let pb = jf * std::f64::consts::PI * (xb + l) / (2.0 * l);
        out.push(norm * scale * (pa.cos() - pb.cos()));
    }
    Ok(out)
}

/// Discrete constraint row `h_j = Σ_k φ_j(r_k) Δr_k` over a quadrature grid.
///
/// This is the quadrature counterpart of [`basis_integral`]: conditioning on
/// `hᵀα = 1` makes the *quadrature* of the reconstructed density equal one
/// exactly on that grid, which is the normalization actually reported with
/// gridded results.
pub fn constraint_row(expansion: &BasisExpansion, grid: &SizeGrid) -> Result<Vec<f64>> {
    let phi_m = phi_matrix(expansion, grid.radii())?;
    let mut h = vec![0.0; expansion.q];
    for j in 0..expansion.q {
        let mut acc = 0.0;
        for (k, &w) in grid.weights().iter().enumerate() {
            acc += phi_m[(k, j)] * w;
        }
        h[j] = acc;
    }
    Ok(h)
}
