//! Discretized particle-radius and wavelength axes.
//!
//! The radius grid carries quadrature weights so that sums of the form
//! `Σ_k f(r_k) Δr_k` approximate `∫ f(r) dr` over the size domain. The
//! default rule is the composite trapezoid (endpoints half-weighted); a
//! midpoint rule is available for grids that must avoid the endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quadrature rule used to build a uniform [`SizeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    Midpoint,
}

/// Particle-radius axis with quadrature weights (length units, e.g. µm).
#[derive(Debug, Clone, PartialEq)]
pub struct SizeGrid {
    radii: Vec<f64>,
    weights: Vec<f64>,
}

impl SizeGrid {
    /// Builds a grid from explicit nodes and weights.
    pub fn new(radii: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::domain("size grid must contain at least one radius"));
        }
        if radii.len() != weights.len() {
            return Err(Error::dimension(format!(
                "size grid has {} radii but {} weights",
                radii.len(),
                weights.len()
            )));
        }
        if radii[0] <= 0.0 {
            return Err(Error::domain(format!(
                "radii must be positive; got {} at index 0",
                radii[0]
            )));
        }
        for k in 1..radii.len() {
            if radii[k] <= radii[k - 1] {
                return Err(Error::domain(format!(
                    "radii must be strictly increasing; violated at index {k}"
                )));
            }
        }
        if let Some(k) = weights.iter().position(|&w| w <= 0.0) {
            return Err(Error::domain(format!(
                "quadrature weights must be positive; got {} at index {k}",
                weights[k]
            )));
        }
        Ok(SizeGrid { radii, weights })
    }

    /// Uniform grid of `n` nodes on `[r_min, r_max]` with trapezoid weights.
    pub fn uniform_trapezoid(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain("trapezoid grid needs at least two nodes"));
        }
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::domain(format!(
                "invalid radius bounds [{r_min}, {r_max}]"
            )));
        }
        let h = (r_max - r_min) / (n - 1) as f64;
        let radii: Vec<f64> = (0..n).map(|k| r_min + h * k as f64).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Self::new(radii, weights)
    }

    /// Uniform midpoint grid: `n` cell centers on `[r_min, r_max]`, weight `h` each.
    pub fn uniform_midpoint(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::domain("midpoint grid needs at least one node"));
        }
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::domain(format!(
                "invalid radius bounds [{r_min}, {r_max}]"
            )));
        }
        let h = (r_max - r_min) / n as f64;
        let radii: Vec<f64> = (0..n).map(|k| r_min + h * (k as f64 + 0.5)).collect();
        Self::new(radii, vec![h; n])
    }

    /// Uniform grid under the given rule.
    pub fn uniform(r_min: f64, r_max: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        match rule {
            QuadratureRule::Trapezoid => Self::uniform_trapezoid(r_min, r_max, n),
            QuadratureRule::Midpoint => Self::uniform_midpoint(r_min, r_max, n),
        }
    }

    /// Trapezoid grid over arbitrary strictly increasing nodes.
    pub fn from_nodes_trapezoid(radii: Vec<f64>) -> Result<Self> {
        let n = radii.len();
        if n < 2 {
            return Err(Error::domain("trapezoid grid needs at least two nodes"));
        }
        let mut weights = vec![0.0; n];
        for k in 0..n {
            let left = if k == 0 { radii[0] } else { radii[k - 1] };
            let right = if k == n - 1 {
                radii[n - 1]
            } else {
                radii[k + 1]
            };
            weights[k] = 0.5 * (right - left);
        }
        Self::new(radii, weights)
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn r_min(&self) -> f64 {
        self.radii[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    /// Quadrature of samples taken on this grid: `Σ_k f_k Δr_k`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::dimension(format!(
                "expected {} samples, got {}",
                self.len(),
                values.len()
            )));
        }
        Ok(values.iter().zip(&self.weights).map(|(f, w)| f * w).sum())
    }
}

/// Wavelength axis (same length units as the radius grid).
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthGrid {
    wavelengths: Vec<f64>,
}

impl WavelengthGrid {
    pub fn new(wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.is_empty() {
            return Err(Error::domain("wavelength grid must not be empty"));
        }
        if wavelengths[0] <= 0.0 {
            return Err(Error::domain(format!(
                "wavelengths must be positive; got {} at index 0",
                wavelengths[0]
            )));
        }
        for i in 1..wavelengths.len() {
            if wavelengths[i] <= wavelengths[i - 1] {
                return Err(Error::domain(format!(
                    "wavelengths must be strictly increasing; violated at index {i}"
                )));
            }
        }
        Ok(WavelengthGrid { wavelengths })
    }

    pub fn uniform(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::domain("wavelength grid needs at least one node"));
        }
        if n == 1 {
            return Self::new(vec![min]);
        }
        if !(min > 0.0 && max > min) {
            return Err(Error::domain(format!(
                "invalid wavelength bounds [{min}, {max}]"
            )));
        }
        let h = (max - min) / (n - 1) as f64;
        Self::new((0..n).map(|i| min + h * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.wavelengths
    }
}
