//! Earlier sufficient conditions, kept for comparison with the threshold.

use crate::model::ModelParams;
use serde::Serialize;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;
const BOX_LO: f64 = 1e-8;

/// Interior rest point of the noise-free system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub x: f64,
    pub y: f64,
    /// Max-norm of the per-capita rates at the returned point.
    pub residual: f64,
}

fn rates(p: &ModelParams, x: f64, y: f64) -> [f64; 2] {
    let c = p.coef();
    let d = c.m1 + c.m2 * x + c.m3 * y;
    [c.a1 - c.b1 * x - c.c1 * y / d, -c.a2 - c.b2 * y + c.c2 * x / d]
}

fn rates_jacobian(p: &ModelParams, x: f64, y: f64) -> [[f64; 2]; 2] {
    let c = p.coef();
    let d = c.m1 + c.m2 * x + c.m3 * y;
    let d2 = d * d;
    [
        [-c.b1 + c.c1 * c.m2 * y / d2, -c.c1 * (c.m1 + c.m2 * x) / d2],
        [c.c2 * (c.m1 + c.m3 * y) / d2, -c.b2 - c.c2 * c.m3 * x / d2],
    ]
}

fn norm(f: [f64; 2]) -> f64 {
    f[0].abs().max(f[1].abs())
}

fn newton(p: &ModelParams, mut x: f64, mut y: f64) -> Option<(f64, f64, f64)> {
    let mut f = rates(p, x, y);
    for _ in 0..NEWTON_MAX_ITER {
        let r = norm(f);
        if r <= NEWTON_TOL {
            return Some((x, y, r));
        }
        let j = rates_jacobian(p, x, y);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (-f[0] * j[1][1] + f[1] * j[0][1]) / det;
        let dy = (-j[0][0] * f[1] + j[1][0] * f[0]) / det;
        let mut step = 1.0;
        loop {
            let (nx, ny) = (x + step * dx, y + step * dy);
            if nx > 0.0 && ny > 0.0 {
                let nf = rates(p, nx, ny);
                if norm(nf) < r {
                    x = nx;
                    y = ny;
                    f = nf;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                return None;
            }
        }
    }
    let r = norm(f);
    (r <= NEWTON_TOL).then_some((x, y, r))
}

/// Upper end of the search box. Any interior rest point has `x <= a1/b1`
/// (prey nullcline) and `y <= (c2/m2 - a2)/b2` (predator nullcline).
fn search_box_hi(p: &ModelParams) -> f64 {
    let c = p.coef();
    let y_bound = (c.c2 / c.m2 - c.a2) / c.b2;
    10.0 * (c.a1 / c.b1).max(y_bound).max(1.0)
}

/// Interior equilibrium of the deterministic system, found by damped Newton
/// from 16 starts on a log grid over the search box. `None` when no start
/// converges to a point inside the box.
pub fn deterministic_equilibrium(p: &ModelParams) -> Option<Equilibrium> {
    let hi = search_box_hi(p);
    let (l0, l1) = (BOX_LO.ln(), hi.ln());
    let grid: Vec<f64> = (0..4).map(|i| (l0 + (l1 - l0) * i as f64 / 3.0).exp()).collect();
    for &x0 in &grid {
        for &y0 in &grid {
            if let Some((x, y, residual)) = newton(p, x0, y0) {
                if (BOX_LO..=hi).contains(&x) && (BOX_LO..=hi).contains(&y) {
                    return Some(Equilibrium { x, y, residual });
                }
            }
        }
    }
    None
}

/// Tri-state outcome of the Lyapunov-function ergodicity condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JiCondition {
    Yes,
    No,
    NoEquilibrium,
}

impl JiCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            JiCondition::Yes => "yes",
            JiCondition::No => "no",
            JiCondition::NoEquilibrium => "no-equilibrium",
        }
    }
}

/// Checks the three inequalities of the Lyapunov-function ergodicity
/// condition around the deterministic equilibrium `(x*, y*)`:
///
/// ```text
/// (c2 - a2 m2) a1/b1 > a2 m1
/// b1 > a1 m2 / (m1 + m2 x*)
/// delta < min{ c2 (b1 - m2 (a1 - b1 x*)/m1)(m1 + m3 y*) x*^2,  b2 c1 (m1 + m2 x*) y*^2 }
/// delta = c2 x* alpha^2/2 + c1 y* beta^2/2
/// ```
pub fn ji_condition(p: &ModelParams) -> JiCondition {
    let Some(eq) = deterministic_equilibrium(p) else {
        return JiCondition::NoEquilibrium;
    };
    let c = p.coef();
    let (xs, ys) = (eq.x, eq.y);
    let first = (c.c2 - c.a2 * c.m2) * c.a1 / c.b1 > c.a2 * c.m1;
    let second = c.b1 > c.a1 * c.m2 / (c.m1 + c.m2 * xs);
    let delta = c.c2 * xs * c.alpha * c.alpha / 2.0 + c.c1 * ys * c.beta * c.beta / 2.0;
    let prey_term =
        c.c2 * (c.b1 - c.m2 * (c.a1 - c.b1 * xs) / c.m1) * (c.m1 + c.m3 * ys) * xs * xs;
    let predator_term = c.b2 * c.c1 * (c.m1 + c.m2 * xs) * ys * ys;
    let third = delta < prey_term.min(predator_term);
    if first && second && third {
        JiCondition::Yes
    } else {
        JiCondition::No
    }
}

/// Holling type II extinction/persistence conditions, only meaningful for
/// `m1 = m2 = 1, m3 = 0`. All flags are `None` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LwFlags {
    pub applicable: bool,
    /// `a1 - alpha^2/2 > 0` and `c2 + a2 - beta^2/2 < 0`, as published.
    pub extinction: Option<bool>,
    /// Same with `c2 - a2 - beta^2/2 < 0`, the reading the sign may have intended.
    pub extinction_alt: Option<bool>,
    /// `a1 - alpha^2/2 > 0`, `a2 - beta^2/2 > 0`,
    /// `(a1 - alpha^2/2)/c1 > (c2 + a2 - beta^2/2)/b2`.
    pub persistence: Option<bool>,
}

pub fn lw_condition(p: &ModelParams) -> LwFlags {
    let c = p.coef();
    let applicable = c.m1 == 1.0 && c.m2 == 1.0 && c.m3 == 0.0;
    if !applicable {
        return LwFlags {
            applicable,
            extinction: None,
            extinction_alt: None,
            persistence: None,
        };
    }
    let half_b2 = c.beta * c.beta / 2.0;
    let prey = c.a1 - c.alpha * c.alpha / 2.0;
    LwFlags {
        applicable,
        extinction: Some(prey > 0.0 && c.c2 + c.a2 - half_b2 < 0.0),
        extinction_alt: Some(prey > 0.0 && c.c2 - c.a2 - half_b2 < 0.0),
        persistence: Some(
            prey > 0.0 && c.a2 - half_b2 > 0.0 && prey / c.c1 > (c.c2 + c.a2 - half_b2) / c.b2,
        ),
    }
}
