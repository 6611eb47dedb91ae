//! Synthetic scenario generation: ground-truth densities, forward
//! simulation, and seeded noise injection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SizeGrid, WavelengthGrid};
use crate::mie::{kernel_matrix, OpticsConfig};
use crate::rng::PortableRng;

/// One Gaussian component of a mixture density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussComponent {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

/// Ground-truth density family. All densities are renormalized to unit
/// quadrature mass on their grid, so the component weights only set
/// relative proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionFamily {
    Gaussian { mean: f64, std: f64 },
    Lognormal { median: f64, sigma_log: f64 },
    Bimodal { components: Vec<GaussComponent> },
}

/// Ground-truth specification: a family evaluated on a quadrature grid.
#[derive(Debug, Clone)]
pub struct TrueDistributionSpec {
    pub family: DistributionFamily,
    pub grid: SizeGrid,
}

/// Evaluates the family density on the grid and renormalizes it so the
/// quadrature integral is exactly one.
pub fn make_true_rho(spec: &TrueDistributionSpec) -> Result<Vec<f64>> {
    let radii = spec.grid.radii();
    let mut rho: Vec<f64> = match &spec.family {
        DistributionFamily::Gaussian { mean, std } => {
            if !(*std > 0.0) {
                return Err(Error::domain(format!(
                    "gaussian std must be positive, got {std}"
                )));
            }
            radii.iter().map(|&r| gauss_pdf(r, *mean, *std)).collect()
        }
        DistributionFamily::Lognormal { median, sigma_log } => {
            if !(*median > 0.0 && *sigma_log > 0.0) {
                return Err(Error::domain(format!(
                    "lognormal needs positive median and sigma_log, got ({median}, {sigma_log})"
                )));
            }
            radii
                .iter()
                .map(|&r| {
                    let z = (r.ln() - median.ln()) / sigma_log;
                    (-0.5 * z * z).exp() / (r * sigma_log * (2.0 * std::f64::consts::PI).sqrt())
                })
                .collect()
        }
        DistributionFamily::Bimodal { components } => {
            if components.len() != 2 {
                return Err(Error::domain(format!(
                    "bimodal family needs exactly two components, got {}",
                    components.len()
                )));
            }
            for c in components {
                if !(c.std > 0.0 && c.weight > 0.0) {
                    return Err(Error::domain(format!(
                        "component std and weight must be positive: {c:?}"
                    )));
                }
            }
            radii
                .iter()
                .map(|&r| {
                    components
                        .iter()
                        .map(|c| c.weight * gauss_pdf(r, c.mean, c.std))
                        .sum()
                })
                .collect()
        }
    };

    let mass = spec.grid.integrate(&rho)?;
    if !(mass > 1e-300 && mass.is_finite()) {
        return Err(Error::domain(format!(
            "distribution parameters put no mass on the grid (quadrature mass {mass:.3e})"
        )));
    }
    for v in &mut rho {
        *v /= mass;
    }
    Ok(rho)
}

fn gauss_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Where a measurement set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    External,
}

/// Spectral scattering measurements with their noise metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub wavelengths: WavelengthGrid,
    pub mu: Vec<f64>,
    /// Noise standard deviation actually injected (simulation only).
    pub sigma_used: Option<f64>,
    pub seed: Option<u64>,
    pub provenance: Provenance,
}

impl MeasurementSet {
    pub fn new(
        wavelengths: WavelengthGrid,
        mu: Vec<f64>,
        sigma_used: Option<f64>,
        seed: Option<u64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if wavelengths.len() != mu.len() {
            return Err(Error::dimension(format!(
                "{} wavelengths but {} measurements",
                wavelengths.len(),
                mu.len()
            )));
        }
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("measurement {i} is not finite")));
        }
        Ok(MeasurementSet {
            wavelengths,
            mu,
            sigma_used,
            seed,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.mu)
    }
}

/// Noiseless forward values `μ_i = Σ_k A[i][k] ρ_k Δr_k`.
pub fn forward_quadrature(
    a_matrix: &DMatrix<f64>,
    rho: &[f64],
    grid: &SizeGrid,
) -> Result<Vec<f64>> {
    if a_matrix.ncols() != rho.len() || rho.len() != grid.len() {
        return Err(Error::dimension(format!(
            "forward: A is {}x{}, rho has {}, grid has {}",
            a_matrix.nrows(),
            a_matrix.ncols(),
            rho.len(),
            grid.len()
        )));
    }
    let weighted = DVector::from_fn(rho.len(), |k, _| rho[k] * grid.weights()[k]);
    Ok((a_matrix * weighted).iter().cloned().collect())
}

/// Simulates measurements from a known density using a precomputed kernel
/// matrix: quadrature forward model plus i.i.d. `N(0, σ²)` noise from the
/// seeded portable generator. `σ = 0` returns the exact forward values.
pub fn simulate_with_kernel(
    a_matrix: &DMatrix<f64>,
    rho_true: &[f64],
    wavelengths: &WavelengthGrid,
    grid: &SizeGrid,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if sigma < 0.0 {
        return Err(Error::domain(format!(
            "noise sigma must be nonnegative, got {sigma}"
        )));
    }
    if a_matrix.nrows() != wavelengths.len() {
        return Err(Error::dimension(format!(
            "kernel matrix has {} rows but {} wavelengths",
            a_matrix.nrows(),
            wavelengths.len()
        )));
    }
    let mut mu = forward_quadrature(a_matrix, rho_true, grid)?;
    if sigma > 0.0 {
        let mut rng = PortableRng::from_seed(seed);
        for v in &mut mu {
            *v += rng.normal_scaled(sigma);
        }
    }
    MeasurementSet::new(
        wavelengths.clone(),
        mu,
        Some(sigma),
        Some(seed),
        Provenance::Synthetic,
    )
}

/// Simulates measurements, building the Mie kernel matrix internally.
pub fn simulate_measurements(
    rho_true: &[f64],
    optics: &OpticsConfig,
    wavelengths: &WavelengthGrid,
    grid: &SizeGrid,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let a = kernel_matrix(wavelengths, grid, optics)?;
    simulate_with_kernel(&a, rho_true, wavelengths, grid, sigma, seed)
}
