//! Lorenz-Mie scattering efficiencies and the Fredholm kernel.
//!
//! Scattering efficiencies of homogeneous spheres are computed from the
//! Mie series with the usual Riccati-Bessel recurrences: the logarithmic
//! derivative of `ψ_n(mx)` by downward recurrence, `ψ_n(x)` and `χ_n(x)`
//! upward. See Bohren & Huffman, *Absorption and Scattering of Light by
//! Small Particles* (1983), ch. 4, for the scheme.
//!
//! The kernel `A(λ, r) = (3/4) f Q_sca(λ, r) / r` relates a particle size
//! density to the spectral scattering coefficient; [`kernel_matrix`]
//! tabulates it on a wavelength × radius grid.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SizeGrid, WavelengthGrid};

/// Optical constants of the particle/medium pair and the Mie truncation policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsConfig {
    /// Complex refractive index of the particle; `im >= 0` (absorbing or lossless).
    pub n_particle: Complex64,
    /// Real refractive index of the host medium, `> 0`.
    pub n_medium: f64,
    /// Particle volume fraction `f`, in `(0, 1]`.
    pub volume_fraction: f64,
    /// Extra Mie terms kept beyond the empirical truncation rule.
    pub truncation_margin: u32,
}

impl OpticsConfig {
    pub fn new(
        n_particle: Complex64,
        n_medium: f64,
        volume_fraction: f64,
        truncation_margin: u32,
    ) -> Result<Self> {
        let cfg = OpticsConfig {
            n_particle,
            n_medium,
            volume_fraction,
            truncation_margin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_medium > 0.0) {
            return Err(Error::domain(format!(
                "n_medium must be positive, got {}",
                self.n_medium
            )));
        }
        if self.n_particle.im < 0.0 {
            return Err(Error::domain(format!(
                "imag(n_particle) must be nonnegative, got {}",
                self.n_particle.im
            )));
        }
        if !(self.n_particle.re > 0.0) {
            return Err(Error::domain(format!(
                "re(n_particle) must be positive, got {}",
                self.n_particle.re
            )));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "volume fraction must lie in (0, 1], got {}",
                self.volume_fraction
            )));
        }
        Ok(())
    }

    /// Particle index relative to the medium, `m = n_particle / n_medium`.
    pub fn relative_index(&self) -> Complex64 {
        self.n_particle / self.n_medium
    }
}

/// Size parameter `y = 2π n_medium r / λ`.
pub fn size_parameter(radius: f64, wavelength: f64, n_medium: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if !(wavelength > 0.0) {
        return Err(Error::domain(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if !(n_medium > 0.0) {
        return Err(Error::domain(format!(
            "n_medium must be positive, got {n_medium}"
        )));
    }
    Ok(2.0 * std::f64::consts::PI * n_medium * radius / wavelength)
}

/// Number of Mie terms: `max(3, ceil(y + 4 y^{1/3} + 2) + margin)`.
///
/// The floor of 3 keeps the dipole, quadrupole, and octupole terms even for
/// vanishing size parameters.
pub fn truncation_order(y: f64, margin: u32) -> Result<usize> {
    if y < 0.0 {
        return Err(Error::domain(format!(
            "size parameter must be nonnegative, got {y}"
        )));
    }
    let raw = y + 4.0 * y.cbrt() + 2.0;
    // Guard against cbrt rounding pushing an exactly-integer value over the
    // next ceiling (e.g. y = 8 where the rule evaluates to 18 exactly).
    let n = (raw - 1e-9).ceil() as i64 + margin as i64;
    Ok(n.max(3) as usize)
}

/// Mie coefficients `a_n`, `b_n` for `n = 1..=n_terms`.
///
/// Downward recurrence for `D_n(mx) = ψ_n'(mx)/ψ_n(mx)` starting well above
/// the requested order, upward recurrences for `ψ_n(x)` and `χ_n(x)`.
pub fn mie_coefficients(
    y: f64,
    m: Complex64,
    n_terms: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if !(y > 0.0) {
        return Err(Error::domain(format!(
            "size parameter must be positive, got {y}"
        )));
    }
    if n_terms < 1 {
        return Err(Error::domain("at least one Mie term is required"));
    }

    let mx = m * y;
    // Start the downward recurrence above both the requested order and |mx|.
    let n_start = n_terms.max(mx.norm().ceil() as usize) + 15;
    let mut log_deriv = vec![Complex64::new(0.0, 0.0); n_start + 1];
    for n in (1..=n_start).rev() {
        let nf = Complex64::from(n as f64);
        let frac = nf / mx;
        log_deriv[n - 1] = frac - Complex64::new(1.0, 0.0) / (log_deriv[n] + frac);
    }

    // Upward recurrences for psi_n(y) and chi_n(y); xi_n = psi_n - i chi_n.
    let (sin_y, cos_y) = y.sin_cos();
    let mut psi_prev = cos_y; // psi_{-1}
    let mut psi = sin_y; // psi_0
    let mut chi_prev = -sin_y; // chi_{-1}
    let mut chi = cos_y; // chi_0

    let mut a = Vec::with_capacity(n_terms);
    let mut b = Vec::with_capacity(n_terms);
    for n in 1..=n_terms {
        let nf = n as f64;
        let psi_n = (2.0 * nf - 1.0) / y * psi - psi_prev;
        let chi_n = (2.0 * nf - 1.0) / y * chi - chi_prev;
        let xi_n = Complex64::new(psi_n, -chi_n);
        let xi_nm1 = Complex64::new(psi, -chi);

        let d = log_deriv[n];
        let ta = d / m + nf / y;
        let tb = d * m + nf / y;
        let a_n = (ta * psi_n - psi) / (ta * xi_n - xi_nm1);
        let b_n = (tb * psi_n - psi) / (tb * xi_n - xi_nm1);
        if !(a_n.is_finite() && b_n.is_finite()) {
            return Err(Error::numeric(format!(
                "Mie recurrence overflow at order {n} (y = {y}, N = {n_terms})"
            )));
        }
        a.push(a_n);
        b.push(b_n);

        psi_prev = psi;
        psi = psi_n;
        chi_prev = chi;
        chi = chi_n;
    }
    Ok((a, b))
}

/// Scattering efficiency `Q_sca = (2/y²) Σ (2n+1)(|a_n|² + |b_n|²)`.
///
/// The number of terms follows [`truncation_order`] with the given margin.
pub fn q_sca(y: f64, m: Complex64, truncation_margin: u32) -> Result<f64> {
    let n_terms = truncation_order(y, truncation_margin)?;
    let (a, b) = mie_coefficients(y, m, n_terms)?;
    let mut sum = 0.0;
    for n in 1..=n_terms {
        sum += (2.0 * n as f64 + 1.0) * (a[n - 1].norm_sqr() + b[n - 1].norm_sqr());
    }
    Ok(2.0 / (y * y) * sum)
}

/// Fredholm kernel `A(λ, r) = (3/4) f Q_sca(λ, r) / r` (inverse length units).
pub fn scattering_kernel(wavelength: f64, radius: f64, config: &OpticsConfig) -> Result<f64> {
    config.validate()?;
    let y = size_parameter(radius, wavelength, config.n_medium)?;
    let q = q_sca(y, config.relative_index(), config.truncation_margin)?;
    Ok(0.75 * config.volume_fraction * q / radius)
}

/// Kernel matrix `A[i][k] = A(λ_i, r_k)` on the given grids.
///
/// Rows are evaluated in parallel; every entry is an independent pure
/// computation, so the result is bit-identical to sequential evaluation.
pub fn kernel_matrix(
    wavelengths: &WavelengthGrid,
    sizes: &SizeGrid,
    config: &OpticsConfig,
) -> Result<nalgebra::DMatrix<f64>> {
    config.validate()?;
    let rows: Vec<Vec<f64>> = wavelengths
        .values()
        .par_iter()
        .enumerate()
        .map(|(i, &lambda)| {
            sizes
                .radii()
                .iter()
                .enumerate()
                .map(|(k, &r)| {
                    scattering_kernel(lambda, r, config).map_err(|e| {
                        Error::numeric(format!("kernel entry (λ index {i}, r index {k}): {e}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let n_lambda = wavelengths.len();
    let n_r = sizes.len();
    Ok(nalgebra::DMatrix::from_fn(n_lambda, n_r, |i, k| rows[i][k]))
}

/// Rayleigh-limit scattering efficiency `(8/3) y⁴ |(m²−1)/(m²+2)|²`.
///
/// Small-argument reference for tests and diagnostics; accurate to O(y²)
/// relative for `y ≲ 0.01`.
pub fn q_sca_rayleigh(y: f64, m: Complex64) -> f64 {
    let m2 = m * m;
    let contrast = (m2 - 1.0) / (m2 + 2.0);
    8.0 / 3.0 * y.powi(4) * contrast.norm_sqr()
}
