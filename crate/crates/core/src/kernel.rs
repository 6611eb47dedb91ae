//! Stationary covariance functions and their one-dimensional spectral
//! densities.
//!
//! Two families are provided: the squared exponential and the Matérn class
//! (Rasmussen & Williams, *Gaussian Processes for Machine Learning*, ch. 4).
//! The spectral densities use the convention `S(ω) = ∫ k(r) e^{-iωr} dr`,
//! so `(1/2π) ∫ S(ω) dω = k(0) = σ_f²`; a Wiener-Khinchin consistency test
//! guards the constants against convention drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Squared exponential (infinitely smooth).
    #[default]
    Se,
    /// Matérn with smoothness `nu`.
    Matern,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelKind::Se => write!(f, "se"),
            KernelKind::Matern => write!(f, "matern"),
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" | "squared-exponential" | "rbf" => Ok(KernelKind::Se),
            "matern" => Ok(KernelKind::Matern),
            other => Err(Error::domain(format!("unknown kernel kind '{other}'"))),
        }
    }
}

/// Hyperparameters of a stationary kernel.
///
/// `nu` is only meaningful for the Matérn family and is ignored by the
/// squared exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub kind: KernelKind,
    /// Signal standard deviation (units of the modeled density).
    pub sigma_f: f64,
    /// Correlation length scale (radius units).
    pub ell: f64,
    /// Matérn smoothness.
    pub nu: f64,
}

impl KernelHyperparams {
    pub fn se(sigma_f: f64, ell: f64) -> Result<Self> {
        let k = KernelHyperparams {
            kind: KernelKind::Se,
            sigma_f,
            ell,
            nu: 1.5,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn matern(sigma_f: f64, ell: f64, nu: f64) -> Result<Self> {
        let k = KernelHyperparams {
            kind: KernelKind::Matern,
            sigma_f,
            ell,
            nu,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0) {
            return Err(Error::domain(format!(
                "sigma_f must be positive, got {}",
                self.sigma_f
            )));
        }
        if !(self.ell > 0.0) {
            return Err(Error::domain(format!(
                "ell must be positive, got {}",
                self.ell
            )));
        }
        if self.kind == KernelKind::Matern && !(self.nu > 0.0) {
            return Err(Error::domain(format!(
                "Matérn smoothness nu must be positive, got {}",
                self.nu
            )));
        }
        Ok(())
    }

    /// Returns a copy with rescaled amplitude and length (used by optimizers).
    pub fn with_sigma_ell(&self, sigma_f: f64, ell: f64) -> Self {
        KernelHyperparams {
            sigma_f,
            ell,
            ..*self
        }
    }
}

/// Covariance `k(r, r')`; symmetric, equal to `σ_f²` at zero lag.
pub fn covariance(params: &KernelHyperparams, r: f64, r_prime: f64) -> Result<f64> {
    params.validate()?;
    let d = (r - r_prime).abs();
    let s2 = params.sigma_f * params.sigma_f;
    match params.kind {
        KernelKind::Se => {
            let z = d / params.ell;
            Ok(s2 * (-0.5 * z * z).exp())
        }
        KernelKind::Matern => Ok(s2 * matern_correlation(params.nu, d / params.ell)),
    }
}

/// Matérn correlation `k(d)/σ_f²` at scaled distance `t = d/ℓ`.
///
/// Closed forms for ν ∈ {1/2, 3/2, 5/2}; the general order goes through the
/// modified Bessel function of the second kind.
fn matern_correlation(nu: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    const SQRT3: f64 = 1.732_050_807_568_877_2;
    const SQRT5: f64 = 2.236_067_977_499_79;
    if nu == 0.5 {
        (-t).exp()
    } else if nu == 1.5 {
        let z = SQRT3 * t;
        (1.0 + z) * (-z).exp()
    } else if nu == 2.5 {
        let z = SQRT5 * t;
        (1.0 + z + z * z / 3.0) * (-z).exp()
    } else {
        let z = (2.0 * nu).sqrt() * t;
        if z > 650.0 {
            // K_nu underflows; the correlation is zero to double precision.
            return 0.0;
        }
        let (_, k_nu) = puruspe::Inu_Knu(nu, z);
        2.0f64.powf(1.0 - nu) / puruspe::gamma(nu) * z.powf(nu) * k_nu
    }
}

/// One-dimensional spectral density `S(ω)`; even and strictly positive.
pub fn spectral_density(params: &KernelHyperparams, omega: f64) -> Result<f64> {
    params.validate()?;
    let s2 = params.sigma_f * params.sigma_f;
    let ell = params.ell;
    match params.kind {
        KernelKind::Se => {
            let arg = ell * omega;
            Ok(s2 * (2.0 * std::f64::consts::PI).sqrt() * ell * (-0.5 * arg * arg).exp())
        }
        KernelKind::Matern => {
            let nu = params.nu;
            let two_nu = 2.0 * nu;
            let constant =
                2.0 * std::f64::consts::PI.sqrt() * puruspe::gamma(nu + 0.5) * two_nu.powf(nu)
                    / (puruspe::gamma(nu) * ell.powf(two_nu));
            Ok(s2 * constant * (two_nu / (ell * ell) + omega * omega).powf(-(nu + 0.5)))
        }
    }
}
