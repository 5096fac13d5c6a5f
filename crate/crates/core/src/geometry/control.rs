//! Control-system view of the shared-noise model.
//!
//! With one noise source the state moves along the direction `(alpha, beta)`
//! plus drift. In the coordinates `(u, z)` with `z = v - r u`, `r = beta/alpha`,
//! the noise only acts on `u`, and `z` follows `dz = h(u, z) dt`. The support
//! of the stationary law is then the whole plane when `0 < beta < alpha`,
//! and the half-plane `{z <= c*}` otherwise.

use super::GeometryError;
use crate::model::{ModelParams, NoiseMode, LOG_OVERFLOW_GUARD};
use crate::sim::TrajectoryView;
use crate::threshold::{lambda_quadrature, ThresholdError, DEFAULT_LAMBDA_TOL};
use serde::{Serialize, Serializer};

const SCAN_POINTS: usize = 801;
const GOLDEN_TOL: f64 = 1e-10;
const INITIAL_HALF_WIDTH: f64 = 30.0;
const MAX_HALF_WIDTH: f64 = 200.0;

pub const DEFAULT_Z_LO: f64 = -50.0;
pub const DEFAULT_Z_HI: f64 = 50.0;
pub const DEFAULT_SCAN_STEP: f64 = 0.5;
pub const DEFAULT_C_STAR_TOL: f64 = 1e-9;

fn slope(p: &ModelParams) -> f64 {
    p.coef().beta / p.coef().alpha
}

/// `(g, h)` at `(u, z)`:
///
/// ```text
/// g = a1 - alpha^2/2 - b1 e^u - c1 e^(z + r u) / D
/// h = -(a2 + beta^2/2 + r (a1 - alpha^2/2)) - b2 e^(z + r u) + r b1 e^u
///     + (c2 e^u + r c1 e^(z + r u)) / D
/// D = m1 + m2 e^u + m3 e^(z + r u)
/// ```
pub fn g_h(p: &ModelParams, u: f64, z: f64) -> Result<(f64, f64), GeometryError> {
    let r = slope(p);
    let v = z + r * u;
    if !(u <= LOG_OVERFLOW_GUARD && v <= LOG_OVERFLOW_GUARD) || u.is_nan() || v.is_nan() {
        return Err(GeometryError::Overflow { u, z });
    }
    Ok(g_h_unchecked(p, r, u, v))
}

#[inline]
fn g_h_unchecked(p: &ModelParams, r: f64, u: f64, v: f64) -> (f64, f64) {
    let c = p.coef();
    let (e1, e2) = (u.exp(), v.exp());
    let d = c.m1 + c.m2 * e1 + c.m3 * e2;
    let prey0 = p.prey_log_growth();
    let g = prey0 - c.b1 * e1 - c.c1 * e2 / d;
    let h = -(c.a2 + c.beta * c.beta / 2.0 + r * prey0) - c.b2 * e2
        + r * c.b1 * e1
        + (c.c2 * e1 + r * c.c1 * e2) / d;
    (g, h)
}

/// Supremum of `u -> h(u, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupH {
    /// `+inf` when `h` grows without bound.
    pub value: f64,
    /// Maximizer; `None` when the supremum is approached at the edge of the
    /// bracket (flat tail or divergence).
    pub argmax: Option<f64>,
    pub diverges: bool,
}

fn requires_half_plane(p: &ModelParams) -> Result<(), GeometryError> {
    let c = p.coef();
    if c.beta > 0.0 && c.beta < c.alpha {
        Err(GeometryError::FullPlaneCase)
    } else {
        Ok(())
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bracket end state after expansion.
enum End {
    /// Endpoint value at least 1 below the interior maximum.
    Below,
    /// Endpoint value stopped changing.
    Flat(f64),
    /// Endpoint value kept increasing up to the cap.
    Rising,
}

/// Sup of `h(., z)` by a scan over a bracket expanded until both ends fall
/// clearly below the interior maximum, then golden-section refinement.
pub fn sup_h(p: &ModelParams, z: f64) -> Result<SupH, GeometryError> {
    requires_half_plane(p)?;
    let r = slope(p);
    let cap = MAX_HALF_WIDTH.min((LOG_OVERFLOW_GUARD - z.abs()) / r.abs().max(1.0));
    if !(cap > 1.0) {
        return Err(GeometryError::BracketFailure { z });
    }
    let h = |u: f64| g_h_unchecked(p, r, u, z + r * u).1;
    let scan = |lo: f64, hi: f64| -> (f64, f64) {
        (0..SCAN_POINTS)
            .map(|i| {
                let u = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
                (u, h(u))
            })
            .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    };

    let mut width = INITIAL_HALF_WIDTH.min(cap);
    let mut prev_ends: Option<(f64, f64)> = None;
    let (lo_state, hi_state, best) = loop {
        let (lo, hi) = (-width, width);
        let best = scan(lo, hi);
        let (h_lo, h_hi) = (h(lo), h(hi));
        let classify = |end: f64, prev: Option<f64>| -> Option<End> {
            if end <= best.1 - 1.0 {
                return Some(End::Below);
            }
            let prev = prev?;
            if (end - prev).abs() <= 1e-12 * end.abs().max(1.0) {
                Some(End::Flat(end))
            } else if width >= cap && end > prev {
                Some(End::Rising)
            } else {
                None
            }
        };
        let lo_state = classify(h_lo, prev_ends.map(|e| e.0));
        let hi_state = classify(h_hi, prev_ends.map(|e| e.1));
        let rising = matches!(lo_state, Some(End::Rising)) || matches!(hi_state, Some(End::Rising));
        if let (Some(a), Some(b)) = (lo_state, hi_state) {
            break (a, b, best);
        }
        if width >= cap {
            if rising {
                return Ok(SupH {
                    value: f64::INFINITY,
                    argmax: None,
                    diverges: true,
                });
            }
            return Err(GeometryError::BracketFailure { z });
        }
        prev_ends = Some((h_lo, h_hi));
        width = (2.0 * width).min(cap);
    };
    if matches!(lo_state, End::Rising) || matches!(hi_state, End::Rising) {
        return Ok(SupH {
            value: f64::INFINITY,
            argmax: None,
            diverges: true,
        });
    }

    let step = 2.0 * width / (SCAN_POINTS - 1) as f64;
    let (a, b) = (best.0 - step, best.0 + step);
    let (u_star, h_star) = golden_max(h, a.max(-width), b.min(width));
    let (mut value, mut argmax) = if h_star >= best.1 {
        (h_star, Some(u_star))
    } else {
        (best.1, Some(best.0))
    };
    for end in [lo_state, hi_state] {
        if let End::Flat(limit) = end {
            if limit > value {
                value = limit;
                argmax = None;
            }
        }
    }
    Ok(SupH {
        value,
        argmax,
        diverges: false,
    })
}

fn serialize_extended<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "+inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

/// Critical offset of the half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CStar {
    /// Smallest root of `z -> sup_h(z)`; `+inf` if no root up to the scan end.
    #[serde(serialize_with = "serialize_extended")]
    pub value: f64,
    /// Final bisection interval; `sup_h` is positive at the left end and
    /// nonpositive at the right end, which equals `value`.
    pub bracket: (f64, f64),
    /// `sup_h` turned positive again later in the scan.
    pub sign_oscillation: bool,
}

fn sup_positive(p: &ModelParams, z: f64) -> Result<bool, GeometryError> {
    Ok(sup_h(p, z)?.value > 0.0)
}

/// Locates the smallest root of `z -> sup_h(z)` on `[z_lo, z_hi]`: scan
/// with `step`, then bisect to width `tol`.
pub fn c_star(
    p: &ModelParams,
    z_lo: f64,
    z_hi: f64,
    step: f64,
    tol: f64,
) -> Result<CStar, GeometryError> {
    requires_half_plane(p)?;
    if !(z_lo < z_hi && step > 0.0 && tol > 0.0) {
        return Err(GeometryError::BadScan);
    }
    if !sup_positive(p, z_lo)? {
        return Err(GeometryError::ScanInconclusive { z: z_lo });
    }
    let n = ((z_hi - z_lo) / step).ceil() as usize;
    let grid = |k: usize| (z_lo + k as f64 * step).min(z_hi);
    let mut root_at = None;
    for k in 1..=n {
        if !sup_positive(p, grid(k))? {
            root_at = Some(k);
            break;
        }
    }
    let Some(k) = root_at else {
        return Ok(CStar {
            value: f64::INFINITY,
            bracket: (z_hi, f64::INFINITY),
            sign_oscillation: false,
        });
    };
    let (mut a, mut b) = (grid(k - 1), grid(k));
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if sup_positive(p, m)? {
            a = m;
        } else {
            b = m;
        }
    }
    let mut sign_oscillation = false;
    for j in k + 1..=n {
        if sup_positive(p, grid(j))? {
            sign_oscillation = true;
            break;
        }
    }
    Ok(CStar {
        value: b,
        bracket: (a, b),
        sign_oscillation,
    })
}

/// Support of the stationary law in log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum ControlSetDescriptor {
    FullPlane,
    /// `{(u, v) : v - slope u <= c_star}`.
    HalfPlane {
        slope: f64,
        #[serde(serialize_with = "serialize_extended")]
        c_star: f64,
        sign_oscillation: bool,
    },
}

/// Classifies the invariant control set; needs `lambda > 0`.
pub fn invariant_control_set(p: &ModelParams) -> Result<ControlSetDescriptor, GeometryError> {
    let lambda = match lambda_quadrature(p, DEFAULT_LAMBDA_TOL) {
        Ok(est) => est.lambda,
        Err(ThresholdError::ToleranceNotMet { value, .. }) => value,
        Err(_) => return Err(GeometryError::LambdaNotPositive(f64::NAN)),
    };
    if !(lambda > 0.0) {
        return Err(GeometryError::LambdaNotPositive(lambda));
    }
    let c = p.coef();
    if c.beta > 0.0 && c.beta < c.alpha {
        return Ok(ControlSetDescriptor::FullPlane);
    }
    let cs = c_star(p, DEFAULT_Z_LO, DEFAULT_Z_HI, DEFAULT_SCAN_STEP, DEFAULT_C_STAR_TOL)?;
    Ok(ControlSetDescriptor::HalfPlane {
        slope: slope(p),
        c_star: cs.value,
        sign_oscillation: cs.sign_oscillation,
    })
}

/// Fraction of recorded time with `v - slope u > c_star + margin`.
pub fn support_membership(
    traj: &TrajectoryView,
    d: &ControlSetDescriptor,
    margin: f64,
) -> Result<f64, GeometryError> {
    if traj.mode != NoiseMode::Shared {
        return Err(GeometryError::NotShared);
    }
    let v = traj.v.ok_or(GeometryError::NotShared)?;
    match *d {
        ControlSetDescriptor::FullPlane => Ok(0.0),
        ControlSetDescriptor::HalfPlane { slope, c_star, .. } => {
            if traj.is_empty() {
                return Ok(0.0);
            }
            let limit = c_star + margin;
            let outside = traj
                .u
                .iter()
                .zip(v)
                .filter(|(u, v)| *v - slope * *u > limit)
                .count();
            Ok(outside as f64 / traj.len() as f64)
        }
    }
}
