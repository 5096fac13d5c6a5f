//! The extinction/permanence threshold.
//!
//! ```text
//! lambda = -a2 - beta^2/2 + E[ c2 X / (m1 + m2 X) ],   X ~ Gamma(q, a)
//! ```
//!
//! where Gamma(q, a) is the stationary law of the prey without predators.
//! Negative `lambda` means the predator dies out exponentially fast; positive
//! `lambda` means the pair has an invariant law on the open quadrant.

mod literature;
mod sweep;

pub use literature::{
    deterministic_equilibrium, ji_condition, lw_condition, Equilibrium, JiCondition, LwFlags,
};
pub use sweep::{
    sweep, SweepAxis, SweepError, SweepRow, SweepSpec, SweepSummary, SweepTable, DEFAULT_CELL_CAP,
};

use crate::boundary::{predator_dominating_law, prey_law, GammaLaw};
use crate::model::{ModelParams, Regime};
use crate::quadrature::{self, QuadratureError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Default absolute tolerance for the threshold integral.
pub const DEFAULT_LAMBDA_TOL: f64 = 1e-10;

const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("prey goes extinct on its own (a1 <= alpha^2/2); the threshold is undefined")]
    RegimePrecondition,
    #[error("threshold quadrature did not reach tolerance {tol:e} (estimated error {error:e})")]
    ToleranceNotMet { tol: f64, error: f64, value: f64 },
    #[error("Monte Carlo estimate needs at least 1000 samples (got {0})")]
    TooFewSamples(usize),
    #[error("permanence floor needs lambda > 0 (got {0})")]
    NonPositiveLambda(f64),
    #[error("quadrature failed: {0}")]
    Quadrature(QuadratureError),
}

/// Threshold value with its error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    /// Bound on `|lambda - computed|` (quadrature estimate plus truncated tail).
    pub error: f64,
    /// `E[c2 X / (m1 + m2 X)]`, the predator's mean intake against the prey law.
    pub response_integral: f64,
}

fn prey_gamma(p: &ModelParams) -> Result<GammaLaw, ThresholdError> {
    prey_law(p)
        .stationary()
        .copied()
        .ok_or(ThresholdError::RegimePrecondition)
}

/// `E[1 / (m1 + m2 X)]` over `X ~ law`, together with the error committed.
/// The integrand is bounded by `1/m1`, so the truncated tail contributes at
/// most `P(X > x_max) / m1`.
fn expected_inverse_denominator(
    law: &GammaLaw,
    m1: f64,
    m2: f64,
    abs_tol: f64,
    tail_target: f64,
) -> Result<(f64, f64), QuadratureError> {
    let mut x_max = law.mean() + 10.0 * law.variance().sqrt();
    let mut tail = law.tail(x_max);
    while tail > tail_target && x_max < 1e300 {
        x_max *= 2.0;
        tail = law.tail(x_max);
    }
    let (q, a, ln_c) = (law.shape(), law.rate(), law.log_norm());
    let r = if q >= 1.0 {
        quadrature::integrate(
            |x| {
                if x <= 0.0 {
                    return if q == 1.0 { ln_c.exp() / m1 } else { 0.0 };
                }
                (ln_c + (q - 1.0) * x.ln() - a * x).exp() / (m1 + m2 * x)
            },
            0.0,
            x_max,
            abs_tol,
            MAX_SEGMENTS,
        )?
    } else {
        // x = t^(1/q) removes the x^(q-1) singularity at the origin.
        quadrature::integrate(
            |t: f64| {
                let x = t.powf(1.0 / q);
                (ln_c - a * x).exp() / (q * (m1 + m2 * x))
            },
            0.0,
            x_max.powf(q),
            abs_tol,
            MAX_SEGMENTS,
        )?
    };
    Ok((r.value, r.error + tail / m1))
}

/// Threshold by adaptive quadrature.
///
/// Uses `x/(m1 + m2 x) = (1 - m1/(m1 + m2 x)) / m2`, so only the bounded,
/// monotone `E[1/(m1 + m2 X)]` is integrated numerically.
pub fn lambda_quadrature(p: &ModelParams, tol: f64) -> Result<LambdaEstimate, ThresholdError> {
    let law = prey_gamma(p)?;
    let c = p.coef();
    let scale = c.c2 * c.m1 / c.m2;
    let tail_target = tol * c.m2 / (10.0 * c.c2);
    let (e_inv, e_err) =
        match expected_inverse_denominator(&law, c.m1, c.m2, 0.5 * tol / scale, tail_target) {
            Ok(v) => v,
            Err(QuadratureError::ToleranceNotMet { error, value, .. }) => {
                let response = c.c2 / c.m2 * (1.0 - c.m1 * value);
                return Err(ThresholdError::ToleranceNotMet {
                    tol,
                    error: scale * error,
                    value: response + p.predator_log_decay(),
                });
            }
            Err(e) => return Err(ThresholdError::Quadrature(e)),
        };
    let response_integral = c.c2 / c.m2 * (1.0 - c.m1 * e_inv);
    let error = scale * e_err;
    if error > tol {
        return Err(ThresholdError::ToleranceNotMet {
            tol,
            error,
            value: response_integral + p.predator_log_decay(),
        });
    }
    Ok(LambdaEstimate {
        lambda: response_integral + p.predator_log_decay(),
        error,
        response_integral,
    })
}

/// Monte Carlo estimate of the threshold from `n` Gamma draws, with its
/// standard error. Independent of the quadrature path.
pub fn lambda_mc(p: &ModelParams, n: usize, seed: u64) -> Result<(f64, f64), ThresholdError> {
    let law = prey_gamma(p)?;
    if n < 1000 {
        return Err(ThresholdError::TooFewSamples(n));
    }
    let c = p.coef();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = law.sample_with(&mut rng, n);
    let vals: Vec<f64> = xs.iter().map(|&x| c.c2 * x / (c.m1 + c.m2 * x)).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean + p.predator_log_decay(), (var / n as f64).sqrt()))
}

/// Regime from an already computed threshold.
pub fn regime_for(p: &ModelParams, lambda: f64, eps_critical: f64) -> Regime {
    if !p.prey_persists() {
        Regime::BothExtinct
    } else if lambda < -eps_critical {
        Regime::PredatorExtinct
    } else if lambda > eps_critical {
        Regime::Coexistence
    } else {
        Regime::Critical
    }
}

/// Threshold value used for classification: the quadrature result, or its
/// best value when the tolerance could not be certified.
fn lambda_value(p: &ModelParams) -> Result<f64, ThresholdError> {
    match lambda_quadrature(p, DEFAULT_LAMBDA_TOL) {
        Ok(est) => Ok(est.lambda),
        Err(ThresholdError::ToleranceNotMet { value, .. }) => Ok(value),
        Err(e) => Err(e),
    }
}

pub fn classify(p: &ModelParams, eps_critical: f64) -> Regime {
    match lambda_value(p) {
        Ok(lambda) => regime_for(p, lambda, eps_critical),
        Err(ThresholdError::RegimePrecondition) => Regime::BothExtinct,
        Err(e) => panic!("threshold evaluation failed for validated parameters: {e}"),
    }
}

/// Jensen upper bound on the threshold: the response evaluated at the prey mean.
pub fn jensen_bound(p: &ModelParams) -> Result<f64, ThresholdError> {
    let k1 = prey_gamma(p)?.mean();
    let c = p.coef();
    Ok(p.predator_log_decay() + c.c2 * k1 / (c.m1 + c.m2 * k1))
}

/// Lower bound on the long-run time average of the predator when `lambda > 0`.
pub fn permanence_floor(p: &ModelParams, lambda: f64) -> Result<f64, ThresholdError> {
    if !(lambda > 0.0) {
        return Err(ThresholdError::NonPositiveLambda(lambda));
    }
    let c = p.coef();
    let num = c.b1 * c.m1 * c.m1 * c.m2 * lambda;
    let den = c.c1 * c.c2 * c.m2 + c.b1 * c.c2 * c.m1 * c.m3 + c.b1 * c.b2 * c.m1 * c.m1 * c.m2;
    Ok(num / den)
}

/// Constants controlling the long-run occupation of the box
/// `{0 < x <= H, hbar <= y <= H}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// `K_1`, long-run mean of the prey-only process.
    pub k1: f64,
    /// `K_p` of the predator dominating process for p = 1, 2; `None` when
    /// that process collapses to zero.
    pub k_hat1: Option<f64>,
    pub k_hat2: Option<f64>,
    /// Permanence floor; `None` unless `lambda > 0`.
    pub m_bar: Option<f64>,
}

impl BoundConstants {
    pub fn from_params(p: &ModelParams, lambda: Option<f64>) -> Result<Self, ThresholdError> {
        let k1 = prey_gamma(p)?.mean();
        let psi = predator_dominating_law(p);
        let k_hat = psi.stationary();
        Ok(Self {
            k1,
            k_hat1: k_hat.map(|g| g.moment(1.0)),
            k_hat2: k_hat.map(|g| g.moment(2.0)),
            m_bar: lambda.and_then(|l| permanence_floor(p, l).ok()),
        })
    }

    /// `hbar = m_bar / 2` and the smallest admissible `H = 8 (K1 + K^1) K^2 / m_bar^2`.
    pub fn default_box(&self) -> Option<(f64, f64)> {
        let (m, kh1, kh2) = (self.m_bar?, self.k_hat1?, self.k_hat2?);
        Some((0.5 * m, 8.0 * (self.k1 + kh1) * kh2 / (m * m)))
    }

    /// Guaranteed long-run occupation of the box, `m_bar^2 / (8 K^2)`.
    pub fn box_occupation_floor(&self) -> Option<f64> {
        let (m, kh2) = (self.m_bar?, self.k_hat2?);
        Some(m * m / (8.0 * kh2))
    }
}

/// Everything the classifier knows about one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub lambda: Option<f64>,
    pub quadrature_error: Option<f64>,
    pub regime: Regime,
    pub jensen_bound: Option<f64>,
    pub response_integral: Option<f64>,
    pub permanence_floor: Option<f64>,
    pub ji_condition: JiCondition,
    pub lw_flags: LwFlags,
    /// Shape and rate of the prey-only stationary law.
    pub prey_law: Option<GammaLaw>,
    pub bounds: Option<BoundConstants>,
}

pub fn threshold_report(
    p: &ModelParams,
    eps_critical: f64,
    tol: f64,
) -> Result<ThresholdReport, ThresholdError> {
    let ji = ji_condition(p);
    let lw = lw_condition(p);
    let Some(law) = prey_law(p).stationary().copied() else {
        return Ok(ThresholdReport {
            lambda: None,
            quadrature_error: None,
            regime: Regime::BothExtinct,
            jensen_bound: None,
            response_integral: None,
            permanence_floor: None,
            ji_condition: ji,
            lw_flags: lw,
            prey_law: None,
            bounds: None,
        });
    };
    let est = lambda_quadrature(p, tol)?;
    let regime = regime_for(p, est.lambda, eps_critical);
    let floor = permanence_floor(p, est.lambda).ok();
    Ok(ThresholdReport {
        lambda: Some(est.lambda),
        quadrature_error: Some(est.error),
        regime,
        jensen_bound: Some(jensen_bound(p)?),
        response_integral: Some(est.response_integral),
        permanence_floor: floor,
        ji_condition: ji,
        lw_flags: lw,
        prey_law: Some(law),
        bounds: Some(BoundConstants::from_params(p, Some(est.lambda))?),
    })
}
