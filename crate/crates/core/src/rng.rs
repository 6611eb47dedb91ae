//! Seeded, portable random number generation.
//!
//! All stochastic paths (noise injection, optimizer restarts, test
//! instances) draw from a ChaCha12 stream keyed by a `u64` seed. ChaCha is
//! a counter-based generator with fixed published constants, so identical
//! seeds reproduce identical streams on every platform. Gaussian variates
//! use the explicit Box-Muller transform on two 53-bit uniforms rather
//! than a library sampler, keeping the noise path fully specified.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// ChaCha12-backed generator with uniform and normal draws.
pub struct PortableRng {
    inner: ChaCha12Rng,
}

impl PortableRng {
    pub fn from_seed(seed: u64) -> Self {
        PortableRng {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in the open interval (0, 1): top 53 bits of one draw,
    /// offset by half an ulp so 0 is never produced.
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller: `sqrt(-2 ln u1) cos(2π u2)`.
    /// Consumes exactly two uniforms per variate.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_scaled(&mut self, sigma: f64) -> f64 {
        sigma * self.normal()
    }
}
