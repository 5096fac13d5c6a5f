//! Model coefficients and the two vector fields of the system.
//!
//! Population coordinates:
//!
//! ```text
//! dx = x (a1 - b1 x - c1 y / (m1 + m2 x + m3 y)) dt + alpha x dB1
//! dy = y (-a2 - b2 y + c2 x / (m1 + m2 x + m3 y)) dt + beta  y dB2
//! ```
//!
//! Log coordinates `u = ln x`, `v = ln y` turn the noise additive, which is
//! where all simulation and geometry happens.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Log-state magnitude above which `exp` leaves the double range.
pub const LOG_OVERFLOW_GUARD: f64 = 700.0;

/// Raw, unvalidated coefficients. Field names match the config file keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Coefficients {
    /// Demonstration set with a strictly positive threshold (coexistence).
    pub const fn reference() -> Self {
        Self {
            a1: 2.0,
            b1: 1.0,
            c1: 1.0,
            a2: 0.1,
            b2: 1.0,
            c2: 2.0,
            m1: 1.0,
            m2: 1.0,
            m3: 0.0,
            alpha: 1.0,
            beta: 0.5,
        }
    }

    /// Looks up a coefficient by its config name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "a1" => self.a1,
            "b1" => self.b1,
            "c1" => self.c1,
            "a2" => self.a2,
            "b2" => self.b2,
            "c2" => self.c2,
            "m1" => self.m1,
            "m2" => self.m2,
            "m3" => self.m3,
            "alpha" => self.alpha,
            "beta" => self.beta,
            _ => return None,
        })
    }

    /// Sets a coefficient by its config name; returns `false` for unknown names.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "a1" => &mut self.a1,
            "b1" => &mut self.b1,
            "c1" => &mut self.c1,
            "a2" => &mut self.a2,
            "b2" => &mut self.b2,
            "c2" => &mut self.c2,
            "m1" => &mut self.m1,
            "m2" => &mut self.m2,
            "m3" => &mut self.m3,
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            _ => return false,
        };
        *slot = value;
        true
    }

    pub const NAMES: [&'static str; 11] = [
        "a1", "b1", "c1", "a2", "b2", "c2", "m1", "m2", "m3", "alpha", "beta",
    ];
}

/// A single violated constraint.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{name} must be finite (got {value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("{name} must be strictly positive (got {value})")]
    NonPositiveCoefficient { name: &'static str, value: f64 },
    #[error("{name} must be nonzero")]
    ZeroNoise { name: &'static str },
    #[error("m3 must be non-negative (got {value})")]
    NegativeInterference { value: f64 },
}

impl Violation {
    pub fn coefficient(&self) -> &'static str {
        match self {
            Violation::NonFinite { name, .. }
            | Violation::NonPositiveCoefficient { name, .. }
            | Violation::ZeroNoise { name } => name,
            Violation::NegativeInterference { .. } => "m3",
        }
    }
}

/// Rejection listing every violated constraint, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParamError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model coefficients: ")?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Validated coefficients. `alpha` is stored as `|alpha|`; `beta` keeps its sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelParams {
    coef: Coefficients,
}

impl ModelParams {
    pub fn new(raw: Coefficients) -> Result<Self, ParamError> {
        let mut violations = Vec::new();
        let positive = [
            ("a1", raw.a1),
            ("b1", raw.b1),
            ("c1", raw.c1),
            ("a2", raw.a2),
            ("b2", raw.b2),
            ("c2", raw.c2),
            ("m1", raw.m1),
            ("m2", raw.m2),
        ];
        for (name, value) in positive {
            if !value.is_finite() {
                violations.push(Violation::NonFinite { name, value });
            } else if value <= 0.0 {
                violations.push(Violation::NonPositiveCoefficient { name, value });
            }
        }
        if !raw.m3.is_finite() {
            violations.push(Violation::NonFinite {
                name: "m3",
                value: raw.m3,
            });
        } else if raw.m3 < 0.0 {
            violations.push(Violation::NegativeInterference { value: raw.m3 });
        }
        for (name, value) in [("alpha", raw.alpha), ("beta", raw.beta)] {
            if !value.is_finite() {
                violations.push(Violation::NonFinite { name, value });
            } else if value == 0.0 {
                violations.push(Violation::ZeroNoise { name });
            }
        }
        if !violations.is_empty() {
            return Err(ParamError { violations });
        }
        let mut coef = raw;
        coef.alpha = raw.alpha.abs();
        Ok(Self { coef })
    }

    pub fn reference() -> Self {
        Self::new(Coefficients::reference()).expect("reference coefficients are valid")
    }

    pub fn coef(&self) -> &Coefficients {
        &self.coef
    }

    /// Copy of the coefficients with one field changed, revalidated.
    pub fn with(&self, name: &str, value: f64) -> Result<Self, ParamError> {
        let mut raw = self.coef;
        if !raw.set(name, value) {
            panic!("unknown coefficient name {name:?}");
        }
        Self::new(raw)
    }

    /// `a1 - alpha^2/2`: mean log-growth of the prey alone.
    pub fn prey_log_growth(&self) -> f64 {
        self.coef.a1 - 0.5 * self.coef.alpha * self.coef.alpha
    }

    /// `-a2 - beta^2/2`: mean log-growth of a predator without prey.
    pub fn predator_log_decay(&self) -> f64 {
        -self.coef.a2 - 0.5 * self.coef.beta * self.coef.beta
    }

    /// True when the prey survives on its own, i.e. `a1 > alpha^2/2`.
    pub fn prey_persists(&self) -> bool {
        self.prey_log_growth() > 0.0
    }

    /// Beddington-DeAngelis response `x / (m1 + m2 x + m3 y)`.
    #[inline]
    pub fn response(&self, x: f64, y: f64) -> f64 {
        x / (self.coef.m1 + self.coef.m2 * x + self.coef.m3 * y)
    }
}

/// How the two equations are driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Two independent Brownian motions.
    Independent,
    /// One Brownian motion shared by both equations (degenerate diffusion).
    Shared,
}

/// Long-run fate of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    BothExtinct,
    PredatorExtinct,
    Coexistence,
    Critical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::BothExtinct => "BothExtinct",
            Regime::PredatorExtinct => "PredatorExtinct",
            Regime::Coexistence => "Coexistence",
            Regime::Critical => "Critical",
        };
        f.write_str(s)
    }
}

/// Default half-width of the band around zero treated as critical.
pub const DEFAULT_EPS_CRITICAL: f64 = 1e-3;

/// Drift in population coordinates.
pub fn drift(p: &ModelParams, x: f64, y: f64) -> [f64; 2] {
    let c = p.coef();
    let denom = c.m1 + c.m2 * x + c.m3 * y;
    [
        x * (c.a1 - c.b1 * x - c.c1 * y / denom),
        y * (-c.a2 - c.b2 * y + c.c2 * x / denom),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("log-state ({u}, {v}) exceeds the exponent guard {LOG_OVERFLOW_GUARD}")]
pub struct Overflow {
    pub u: f64,
    pub v: f64,
}

/// Drift of the log-coordinate system. The Ito correction uses `alpha^2` and
/// `beta^2`, so the formula is the same in both noise modes.
///
/// Only the upper side is guarded: a very negative log-state underflows
/// `exp` to zero, which is the correct limit of every term.
pub fn log_drift(p: &ModelParams, _mode: NoiseMode, u: f64, v: f64) -> Result<[f64; 2], Overflow> {
    if !(u <= LOG_OVERFLOW_GUARD && v <= LOG_OVERFLOW_GUARD) || u.is_nan() || v.is_nan() {
        return Err(Overflow { u, v });
    }
    Ok(log_drift_unchecked(p, u, v))
}

#[inline]
pub(crate) fn log_drift_unchecked(p: &ModelParams, u: f64, v: f64) -> [f64; 2] {
    let c = p.coef();
    let x = u.exp();
    let y = v.exp();
    let denom = c.m1 + c.m2 * x + c.m3 * y;
    [
        p.prey_log_growth() - c.b1 * x - c.c1 * y / denom,
        p.predator_log_decay() - c.b2 * y + c.c2 * x / denom,
    ]
}

/// Diffusion coefficient in log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Diffusion {
    /// `diag(alpha, beta)` acting on two independent increments.
    Diagonal([f64; 2]),
    /// Column `(alpha, beta)` acting on one shared increment.
    Column([f64; 2]),
}

impl Diffusion {
    /// Maps driving increments to state increments. `Column` reads `dw[0]` only.
    #[inline]
    pub fn apply(&self, dw: [f64; 2]) -> [f64; 2] {
        match *self {
            Diffusion::Diagonal([s1, s2]) => [s1 * dw[0], s2 * dw[1]],
            Diffusion::Column([s1, s2]) => [s1 * dw[0], s2 * dw[0]],
        }
    }

    /// Row-major 2x2 matrix; the shared case has a zero second column.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        match *self {
            Diffusion::Diagonal([s1, s2]) => [[s1, 0.0], [0.0, s2]],
            Diffusion::Column([s1, s2]) => [[s1, 0.0], [s2, 0.0]],
        }
    }
}

pub fn diffusion_matrix(p: &ModelParams, mode: NoiseMode) -> Diffusion {
    let c = p.coef();
    match mode {
        NoiseMode::Independent => Diffusion::Diagonal([c.alpha, c.beta]),
        NoiseMode::Shared => Diffusion::Column([c.alpha, c.beta]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_set_is_accepted() {
        let p = ModelParams::new(Coefficients::reference()).unwrap();
        assert_eq!(p.coef().alpha, 1.0);
        assert_eq!(p.coef().beta, 0.5);
    }

    #[test]
    fn zero_alpha_is_rejected() {
        let mut raw = Coefficients::reference();
        raw.alpha = 0.0;
        let err = ModelParams::new(raw).unwrap_err();
        assert_eq!(err.violations, vec![Violation::ZeroNoise { name: "alpha" }]);
    }

    #[test]
    fn negative_alpha_is_canonicalized() {
        let mut raw = Coefficients::reference();
        raw.alpha = -1.0;
        let p = ModelParams::new(raw).unwrap();
        assert_eq!(p.coef().alpha, 1.0);
        raw.beta = -0.5;
        assert_eq!(ModelParams::new(raw).unwrap().coef().beta, -0.5);
    }

    #[test]
    fn every_violation_is_reported() {
        let mut raw = Coefficients::reference();
        raw.b1 = -1.0;
        raw.m2 = 0.0;
        raw.m3 = -0.5;
        raw.beta = 0.0;
        raw.c1 = f64::NAN;
        let err = ModelParams::new(raw).unwrap_err();
        let names: Vec<_> = err.violations.iter().map(Violation::coefficient).collect();
        assert_eq!(names, vec!["b1", "c1", "m2", "m3", "beta"]);
        assert!(err.to_string().contains("b1 must be strictly positive"));
    }

    #[test]
    fn drift_examples() {
        let p = ModelParams::reference();
        assert_eq!(drift(&p, 0.0, 3.0)[0], 0.0);
        assert_eq!(drift(&p, 1.5, 0.0), [0.75, 0.0]);
        let d = drift(&p, 1.0, 1.0);
        // x(a1 - b1 x - c1 y/(1+x)) = 2 - 1 - 0.5; y(-a2 - b2 y + c2 x/(1+x)) = -0.1 - 1 + 1
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn log_drift_examples() {
        let p = ModelParams::reference();
        let m = NoiseMode::Independent;
        let a = log_drift(&p, m, 1.5f64.ln(), -800.0).unwrap();
        assert!(a[0].abs() < 1e-15);
        let a = log_drift(&p, m, 0.0, 0.0).unwrap();
        assert!(a[0].abs() < 1e-15);
        assert!((a[1] + 0.225).abs() < 1e-15);
        let a = log_drift(&p, NoiseMode::Shared, 0.0, -50.0).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert!((a[1] - 0.775).abs() < 1e-15);
    }

    #[test]
    fn log_drift_overflow_guard() {
        let p = ModelParams::reference();
        assert!(log_drift(&p, NoiseMode::Independent, 701.0, 0.0).is_err());
        assert!(log_drift(&p, NoiseMode::Independent, 0.0, 701.0).is_err());
        assert!(log_drift(&p, NoiseMode::Independent, f64::NAN, 0.0).is_err());
        assert!(log_drift(&p, NoiseMode::Independent, 0.0, -2000.0).is_ok());
    }

    #[test]
    fn diffusion_examples() {
        let p = ModelParams::reference();
        assert_eq!(
            diffusion_matrix(&p, NoiseMode::Independent).matrix(),
            [[1.0, 0.0], [0.0, 0.5]]
        );
        assert_eq!(
            diffusion_matrix(&p, NoiseMode::Shared),
            Diffusion::Column([1.0, 0.5])
        );
        let neg = p.with("beta", -0.5).unwrap();
        assert_eq!(
            diffusion_matrix(&neg, NoiseMode::Shared),
            Diffusion::Column([1.0, -0.5])
        );
        assert_eq!(
            diffusion_matrix(&neg, NoiseMode::Shared).apply([0.2, 9.0]),
            [0.2, -0.1]
        );
    }

    proptest! {
        #[test]
        fn boundary_invariance(x in 0.0f64..50.0, y in 0.0f64..50.0) {
            let p = ModelParams::reference().with("m3", 0.7).unwrap();
            prop_assert_eq!(drift(&p, 0.0, y)[0], 0.0);
            prop_assert_eq!(drift(&p, x, 0.0)[1], 0.0);
        }

        #[test]
        fn response_is_bounded(x in 0.0f64..1e6, y in 0.0f64..1e6, m3 in 0.0f64..5.0) {
            let p = ModelParams::reference().with("m3", m3).unwrap();
            let r = p.response(x, y);
            prop_assert!(r >= 0.0 && r <= 1.0 / p.coef().m2);
        }

        #[test]
        fn log_drift_is_ito_transform_of_drift(u in -8.0f64..4.0, v in -8.0f64..4.0) {
            let p = ModelParams::reference().with("m3", 0.3).unwrap();
            let (x, y) = (u.exp(), v.exp());
            let d = drift(&p, x, y);
            let a = log_drift(&p, NoiseMode::Independent, u, v).unwrap();
            let c = p.coef();
            prop_assert!((a[0] - (d[0] / x - 0.5 * c.alpha * c.alpha)).abs() < 1e-12);
            prop_assert!((a[1] - (d[1] / y - 0.5 * c.beta * c.beta)).abs() < 1e-12);
        }
    }
}
