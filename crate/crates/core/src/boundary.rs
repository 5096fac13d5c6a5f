//! Stationary law of the logistic diffusion `dphi = phi (r - k phi) dt + s phi dB`.
//!
//! When `r > s^2/2` the law is Gamma with shape `q = 2r/s^2 - 1` and rate
//! `a = 2k/s^2`; otherwise the process collapses to zero. The prey-only
//! boundary process uses `(a1, b1, alpha)`; the predator dominating process
//! uses `(c2/m2 - a2, b2, beta)`.

use crate::model::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LawError {
    #[error("crowding coefficient must be positive (got {0})")]
    NonPositiveCrowding(f64),
    #[error("noise intensity must be nonzero and finite (got {0})")]
    ZeroNoise(f64),
    #[error("density is only defined for x > 0 (got {0})")]
    NonPositivePoint(f64),
    #[error("Gamma law needs shape > 0 and rate > 0 (got q = {q}, a = {a})")]
    InvalidShapeRate { q: f64, a: f64 },
    #[error("sample size must be at least 1")]
    EmptySample,
}

/// Gamma law with shape `q` and rate `a`, density `a^q / Gamma(q) x^(q-1) e^(-a x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaLaw {
    shape: f64,
    rate: f64,
    /// `ln(a^q / Gamma(q))`.
    log_norm: f64,
}

impl GammaLaw {
    pub fn new(shape: f64, rate: f64) -> Result<Self, LawError> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(LawError::InvalidShapeRate { q: shape, a: rate });
        }
        Ok(Self {
            shape,
            rate,
            log_norm: shape * rate.ln() - ln_gamma(shape),
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Normalizing constant `a^q / Gamma(q)`. May overflow for very large shapes;
    /// everything else in this type works from [`GammaLaw::log_norm`].
    pub fn norm_const(&self) -> f64 {
        self.log_norm.exp()
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    /// `K_p = E[X^p] = Gamma(p + q) / (a^p Gamma(q))`, evaluated in log space.
    pub fn moment(&self, p: f64) -> f64 {
        (ln_gamma(p + self.shape) - ln_gamma(self.shape) - p * self.rate.ln()).exp()
    }

    pub fn ln_density(&self, x: f64) -> Result<f64, LawError> {
        if !(x > 0.0) {
            return Err(LawError::NonPositivePoint(x));
        }
        Ok(self.log_norm + (self.shape - 1.0) * x.ln() - self.rate * x)
    }

    pub fn density(&self, x: f64) -> Result<f64, LawError> {
        self.ln_density(x).map(f64::exp)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x.is_infinite() {
            1.0
        } else {
            gamma_lr(self.shape, self.rate * x)
        }
    }

    /// Upper tail `P(X > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            statrs::function::gamma::gamma_ur(self.shape, self.rate * x)
        }
    }

    /// Draws `n` i.i.d. values; the output is a pure function of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>, LawError> {
        if n == 0 {
            return Err(LawError::EmptySample);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with(&mut rng, n))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        // Marsaglia-Tsang squeeze; shapes below one are boosted internally.
        let dist = rand_distr::Gamma::new(self.shape, 1.0 / self.rate)
            .expect("shape and scale validated at construction");
        (0..n).map(|_| rng.sample(dist)).collect()
    }
}

/// Outcome of the logistic diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LogisticLaw {
    Stationary(GammaLaw),
    DegeneratesToZero,
}

impl LogisticLaw {
    pub fn stationary(&self) -> Option<&GammaLaw> {
        match self {
            LogisticLaw::Stationary(law) => Some(law),
            LogisticLaw::DegeneratesToZero => None,
        }
    }
}

pub fn from_logistic(growth: f64, crowding: f64, noise: f64) -> Result<LogisticLaw, LawError> {
    if !(crowding > 0.0) || !crowding.is_finite() {
        return Err(LawError::NonPositiveCrowding(crowding));
    }
    if noise == 0.0 || !noise.is_finite() {
        return Err(LawError::ZeroNoise(noise));
    }
    let s2 = noise * noise;
    if growth <= 0.5 * s2 {
        return Ok(LogisticLaw::DegeneratesToZero);
    }
    let law = GammaLaw::new(2.0 * growth / s2 - 1.0, 2.0 * crowding / s2)?;
    Ok(LogisticLaw::Stationary(law))
}

/// Stationary law of the prey-only boundary process.
pub fn prey_law(p: &ModelParams) -> LogisticLaw {
    let c = p.coef();
    from_logistic(c.a1, c.b1, c.alpha).expect("validated coefficients")
}

/// Stationary law of the process dominating the predator, whose growth rate
/// is the saturated intake `c2/m2` minus the death rate `a2`.
pub fn predator_dominating_law(p: &ModelParams) -> LogisticLaw {
    let c = p.coef();
    from_logistic(c.c2 / c.m2 - c.a2, c.b2, c.beta).expect("validated coefficients")
}
