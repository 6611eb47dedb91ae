//! Particle size distribution retrieval from optical scattering spectra.
//!
//! A spectral scattering coefficient is linked to the particle size density
//! by a first-kind Fredholm integral equation whose kernel comes from
//! Lorenz-Mie theory. Inverting it is ill-posed: this crate regularizes the
//! inversion with a Gaussian-process prior on a reduced-rank Laplace
//! eigenbasis and enforces unit normalization of the recovered density,
//! either as a noise-free pseudo-observation or through an equivalent
//! Lagrange-multiplier solution. Kernel hyperparameters are estimated by
//! maximizing the (optionally constraint-augmented) log marginal
//! likelihood.
//!
//! Modules:
//!
//! * [`mie`] - scattering efficiencies and the Fredholm kernel matrix;
//! * [`kernel`] - stationary covariances and 1-d spectral densities;
//! * [`basis`] - Laplace eigenbasis, spectral prior diagonal, constraint rows;
//! * [`inference`] - constrained/unconstrained posteriors, MAP, dense oracle;
//! * [`hyperopt`] - marginal likelihoods and Nelder-Mead fitting;
//! * [`scenario`] - synthetic truths, forward simulation, seeded noise;
//! * [`config`] / [`io`] - run configuration and file formats;
//! * [`pipeline`] - end-to-end assembly used by the CLI.

pub use nalgebra;
pub use num_complex;

pub mod basis;
pub mod config;
pub mod error;
pub mod grid;
pub mod hyperopt;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod mie;
pub mod pipeline;
pub mod rng;
pub mod scenario;

pub use basis::{
    basis_integral, build_expansion, constraint_row, phi_matrix, BasisExpansion, DomainSpec,
};
pub use config::Config;
pub use error::{Error, Result};
pub use grid::{QuadratureRule, SizeGrid, WavelengthGrid};
pub use hyperopt::{FitObjective, FitReport, HyperBounds, HyperParams, HyperState};
pub use inference::{
    map_lagrange, posterior_constrained, posterior_dense_oracle, posterior_unconstrained,
    predict_measurements, project_forward, CovarianceRepr, ForwardOperators, PosteriorResult,
};
pub use kernel::{covariance, spectral_density, KernelHyperparams, KernelKind};
pub use mie::{
    kernel_matrix, mie_coefficients, q_sca, scattering_kernel, size_parameter, truncation_order,
    OpticsConfig,
};
pub use pipeline::{ConstraintMode, Estimator, ForwardModel};
pub use rng::PortableRng;
pub use scenario::{
    make_true_rho, simulate_measurements, simulate_with_kernel, DistributionFamily, MeasurementSet,
    Provenance, TrueDistributionSpec,
};
