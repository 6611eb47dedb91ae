//! Run configuration: JSON schema, defaults, and validation.
//!
//! Unknown keys anywhere in the file are hard errors. All lengths share one
//! unit (micrometres by default, declared in `units`); measurement files
//! whose headers carry a different unit are rejected at load time.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::DomainSpec;
use crate::error::{Error, Result};
use crate::grid::{QuadratureRule, SizeGrid, WavelengthGrid};
use crate::hyperopt::{HyperBounds, HyperParams, HyperState};
use crate::kernel::{KernelHyperparams, KernelKind};
use crate::mie::OpticsConfig;
use crate::scenario::{DistributionFamily, GaussComponent, TrueDistributionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexIndex {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// One row of a dispersive refractive-index table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexTableRow {
    pub wavelength: f64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    pub n_particle: ComplexIndex,
    /// Optional per-wavelength index table; linearly interpolated, constant
    /// beyond its ends. Overrides `n_particle` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_particle_table: Option<Vec<IndexTableRow>>,
    pub n_medium: f64,
    pub volume_fraction: f64,
    #[serde(default)]
    pub truncation_margin: u32,
}

impl OpticsSection {
    /// Particle index at a wavelength (table interpolation when present).
    pub fn n_particle_at(&self, wavelength: f64) -> Result<Complex64> {
        match &self.n_particle_table {
            None => Ok(Complex64::new(self.n_particle.re, self.n_particle.im)),
            Some(rows) => {
                if rows.is_empty() {
                    return Err(Error::domain("n_particle_table must not be empty"));
                }
                for w in rows.windows(2) {
                    if w[1].wavelength <= w[0].wavelength {
                        return Err(Error::domain(
                            "n_particle_table wavelengths must be strictly increasing",
                        ));
                    }
                }
                let first = &rows[0];
                let last = rows.last().unwrap();
                if wavelength <= first.wavelength {
                    return Ok(Complex64::new(first.re, first.im));
                }
                if wavelength >= last.wavelength {
                    return Ok(Complex64::new(last.re, last.im));
                }
                let idx = rows
                    .windows(2)
                    .position(|w| wavelength >= w[0].wavelength && wavelength <= w[1].wavelength)
                    .unwrap();
                let (a, b) = (&rows[idx], &rows[idx + 1]);
                let t = (wavelength - a.wavelength) / (b.wavelength - a.wavelength);
                Ok(Complex64::new(
                    a.re + t * (b.re - a.re),
                    a.im + t * (b.im - a.im),
                ))
            }
        }
    }

    /// Optics for a specific wavelength.
    pub fn optics_at(&self, wavelength: f64) -> Result<OpticsConfig> {
        OpticsConfig::new(
            self.n_particle_at(wavelength)?,
            self.n_medium,
            self.volume_fraction,
            self.truncation_margin,
        )
    }

    /// Constant optics (errors if a dispersion table is present).
    pub fn optics_constant(&self) -> Result<OpticsConfig> {
        OpticsConfig::new(
            Complex64::new(self.n_particle.re, self.n_particle.im),
            self.n_medium,
            self.volume_fraction,
            self.truncation_margin,
        )
    }

    pub fn is_dispersive(&self) -> bool {
        self.n_particle_table.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeGridSection {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub rule: QuadratureRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthGridSection {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub q: usize,
    /// Basis half-width as a multiple of the data width.
    #[serde(default = "default_half_width_factor")]
    pub half_width_factor: f64,
}

fn default_half_width_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub sigma_f: f64,
    pub ell: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    1.5
}

impl KernelSection {
    pub fn hyperparams(&self) -> Result<KernelHyperparams> {
        let k = KernelHyperparams {
            kind: self.kind,
            sigma_f: self.sigma_f,
            ell: self.ell,
            nu: self.nu,
        };
        k.validate()?;
        Ok(k)
    }
}

/// Noise level for simulation: absolute, or relative to the peak of the
/// noiseless spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Absolute(f64),
    RelativeToPeak(f64),
}

impl NoiseSpec {
    pub fn resolve(&self, noiseless_mu: &[f64]) -> Result<f64> {
        let sigma = match self {
            NoiseSpec::Absolute(s) => *s,
            NoiseSpec::RelativeToPeak(rel) => {
                let peak = noiseless_mu.iter().cloned().fold(0.0f64, f64::max);
                rel * peak
            }
        };
        if sigma < 0.0 {
            return Err(Error::domain(format!(
                "resolved noise sigma {sigma} is negative"
            )));
        }
        Ok(sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    /// Noise std used by inversion when the measurement file provides none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_noise: Option<f64>,
    /// Constraint observation variance (0 = exact constraint).
    #[serde(default)]
    pub constraint_jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub sigma_f_bounds: (f64, f64),
    pub ell_bounds: (f64, f64),
    pub sigma_bounds: (f64, f64),
}

impl OptimizerSection {
    pub fn bounds(&self) -> HyperBounds {
        HyperBounds {
            sigma_f: self.sigma_f_bounds,
            ell: self.ell_bounds,
            sigma_noise: self.sigma_bounds,
        }
    }
}

/// Full run configuration. `Default` is the desk-scale synthetic scenario
/// used throughout the test suite; every value can be overridden in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Length unit shared by all axes (informational; checked against file
    /// headers when they declare one).
    #[serde(default = "default_units")]
    pub units: String,
    pub optics: OpticsSection,
    pub size_grid: SizeGridSection,
    pub wavelength_grid: WavelengthGridSection,
    pub basis: BasisSection,
    pub kernel: KernelSection,
    pub inversion: InversionSection,
    pub truth: DistributionFamily,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub optimizer: OptimizerSection,
}

fn default_units() -> String {
    "um".into()
}

impl Default for Config {
    fn default() -> Self {
        Config {
            units: default_units(),
            optics: OpticsSection {
                n_particle: ComplexIndex { re: 1.45, im: 0.0 },
                n_particle_table: None,
                n_medium: 1.0,
                volume_fraction: 0.05,
                truncation_margin: 0,
            },
            size_grid: SizeGridSection {
                min: 0.05,
                max: 0.5,
                points: 200,
                rule: QuadratureRule::Trapezoid,
            },
            wavelength_grid: WavelengthGridSection {
                min: 0.4,
                max: 1.0,
                points: 100,
            },
            basis: BasisSection {
                q: 128,
                half_width_factor: 1.0,
            },
            kernel: KernelSection {
                kind: KernelKind::Se,
                sigma_f: 2.0,
                ell: 0.03,
                nu: 1.5,
            },
            inversion: InversionSection {
                sigma_noise: None,
                constraint_jitter: 0.0,
            },
            truth: DistributionFamily::Bimodal {
                components: vec![
                    GaussComponent {
                        mean: 0.08,
                        std: 0.015,
                        weight: 0.35,
                    },
                    GaussComponent {
                        mean: 0.35,
                        std: 0.05,
                        weight: 0.65,
                    },
                ],
            },
            noise: NoiseSpec::RelativeToPeak(0.01),
            seed: 42,
            optimizer: OptimizerSection {
                restarts: 5,
                max_iters: 200,
                seed: 1234,
                sigma_f_bounds: (1e-2, 1e2),
                ell_bounds: (5e-3, 0.9),
                sigma_bounds: (1e-8, 10.0),
            },
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.size_grid()?;
        self.wavelength_grid()?;
        self.domain()?;
        self.kernel.hyperparams()?;
        if self.basis.q < 1 {
            return Err(Error::domain("basis.q must be at least 1"));
        }
        if self.inversion.constraint_jitter < 0.0 {
            return Err(Error::domain("constraint_jitter must be nonnegative"));
        }
        if let Some(s) = self.inversion.sigma_noise {
            if !(s > 0.0) {
                return Err(Error::domain(format!(
                    "inversion.sigma_noise must be positive, got {s}"
                )));
            }
        }
        if self.optimizer.restarts < 1 {
            return Err(Error::domain("optimizer.restarts must be at least 1"));
        }
        self.optimizer.bounds().validate()?;
        if !self.optics.is_dispersive() {
            self.optics.optics_constant()?;
        } else {
            self.optics.optics_at(self.wavelength_grid.min)?;
        }
        Ok(())
    }

    pub fn size_grid(&self) -> Result<SizeGrid> {
        SizeGrid::uniform(
            self.size_grid.min,
            self.size_grid.max,
            self.size_grid.points,
            self.size_grid.rule,
        )
    }

    pub fn wavelength_grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::uniform(
            self.wavelength_grid.min,
            self.wavelength_grid.max,
            self.wavelength_grid.points,
        )
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        DomainSpec::new(
            self.size_grid.min,
            self.size_grid.max,
            self.basis.half_width_factor,
        )
    }

    pub fn truth_spec(&self) -> Result<TrueDistributionSpec> {
        Ok(TrueDistributionSpec {
            family: self.truth.clone(),
            grid: self.size_grid()?,
        })
    }

    /// Initial hyperparameter state for the optimizer, seeded from the
    /// kernel section and clipped into the optimizer box.
    pub fn hyper_state(&self) -> Result<HyperState> {
        let bounds = self.optimizer.bounds();
        bounds.validate()?;
        let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
        let sigma_guess = self.inversion.sigma_noise.unwrap_or(1e-3);
        let state = HyperState {
            params: HyperParams {
                sigma_f: clamp(self.kernel.sigma_f, bounds.sigma_f),
                ell: clamp(self.kernel.ell, bounds.ell),
                sigma_noise: clamp(sigma_guess, bounds.sigma_noise),
            },
            nu: self.kernel.nu,
            bounds,
        };
        state.validate()?;
        Ok(state)
    }
}
