//! Euler-Maruyama in log coordinates.
//!
//! With `u = ln x`, `v = ln y` the noise is additive, so
//!
//! ```text
//! u' = u + A1(u, v) dt + alpha dW1
//! v' = v + A2(u, v) dt + beta  dW2
//! ```
//!
//! keeps populations positive by construction and has strong order one.

use crate::model::{
    diffusion_matrix, log_drift_unchecked, ModelParams, NoiseMode, LOG_OVERFLOW_GUARD,
};
use crate::noise::{CounterNoise, NoiseSource, ZeroNoise};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("log-state left the representable range at step {step} (t = {t}): u = {u}, v = {v}; reduce dt")]
    StepOverflow { step: u64, t: f64, u: f64, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub x0: f64,
    pub y0: f64,
    pub seed: u64,
    /// Trajectory id; selects the noise streams.
    #[serde(default)]
    pub trajectory: u64,
    pub mode: NoiseMode,
    /// Record every `thinning`-th step.
    #[serde(default = "one")]
    pub thinning: u64,
    /// Replace all increments by zero.
    #[serde(default)]
    pub drift_only: bool,
    /// Keep the driving increments of every step.
    #[serde(default)]
    pub keep_increments: bool,
}

fn one() -> u64 {
    1
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, x0: f64, y0: f64, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            x0,
            y0,
            seed,
            trajectory: 0,
            mode: NoiseMode::Independent,
            thinning: 1,
            drift_only: false,
            keep_increments: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return bad("horizon must be finite and at least dt");
        }
        if !(self.x0 > 0.0 && self.x0.is_finite() && self.y0 > 0.0 && self.y0.is_finite()) {
            return bad("initial densities must be positive and finite");
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1");
        }
        Ok(())
    }

    /// Number of steps, `horizon / dt` rounded to the nearest integer.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round().max(1.0) as u64
    }

    fn record_len(&self) -> usize {
        (self.steps() / self.thinning) as usize + 1
    }
}

/// Recorded path in log coordinates. One-dimensional paths (boundary and
/// dominating processes) have `v = None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Option<Vec<f64>>,
    /// Time between recorded points, `dt * thinning`.
    pub record_dt: f64,
    pub mode: NoiseMode,
    /// Driving increments of every step, when requested.
    pub increments: Option<Vec<[f64; 2]>>,
}

impl Trajectory {
    /// Builds a path from recorded log-states spaced `record_dt` apart.
    pub fn from_log_states(record_dt: f64, u: Vec<f64>, v: Option<Vec<f64>>, mode: NoiseMode) -> Self {
        let times = (0..u.len()).map(|k| k as f64 * record_dt).collect();
        Self {
            times,
            u,
            v,
            record_dt,
            mode,
            increments: None,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn x(&self) -> impl Iterator<Item = f64> + '_ {
        self.u.iter().map(|u| u.exp())
    }

    pub fn y(&self) -> Option<impl Iterator<Item = f64> + '_> {
        self.v.as_ref().map(|v| v.iter().map(|v| v.exp()))
    }

    pub fn view(&self) -> TrajectoryView<'_> {
        TrajectoryView {
            times: &self.times,
            u: &self.u,
            v: self.v.as_deref(),
            record_dt: self.record_dt,
            mode: self.mode,
        }
    }

    /// Recorded points with `t_from <= t <= t_to`.
    pub fn window(&self, t_from: f64, t_to: f64) -> TrajectoryView<'_> {
        self.view().window(t_from, t_to)
    }

    /// Drops the first `fraction` of the horizon.
    pub fn after_burn_in(&self, fraction: f64) -> TrajectoryView<'_> {
        self.view().after_burn_in(fraction)
    }

    /// Writes `t,u,v,x,y` (or `t,u,x` for one-dimensional paths) with 17
    /// significant digits per value.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.view().write_csv(w)
    }
}

/// Borrowed window of a [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryView<'a> {
    pub times: &'a [f64],
    pub u: &'a [f64],
    pub v: Option<&'a [f64]>,
    pub record_dt: f64,
    pub mode: NoiseMode,
}

impl<'a> TrajectoryView<'a> {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    fn slice(&self, lo: usize, hi: usize) -> TrajectoryView<'a> {
        TrajectoryView {
            times: &self.times[lo..hi],
            u: &self.u[lo..hi],
            v: self.v.map(|v| &v[lo..hi]),
            record_dt: self.record_dt,
            mode: self.mode,
        }
    }

    pub fn window(&self, t_from: f64, t_to: f64) -> TrajectoryView<'a> {
        let lo = self.times.partition_point(|&t| t < t_from);
        let hi = self.times.partition_point(|&t| t <= t_to).max(lo);
        self.slice(lo, hi)
    }

    pub fn after_burn_in(&self, fraction: f64) -> TrajectoryView<'a> {
        let (Some(&t0), Some(&t1)) = (self.times.first(), self.times.last()) else {
            return *self;
        };
        self.window(t0 + fraction * (t1 - t0), t1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match self.v {
            Some(v) => {
                writeln!(w, "t,u,v,x,y")?;
                for ((t, u), v) in self.times.iter().zip(self.u).zip(v) {
                    writeln!(w, "{t:.16e},{u:.16e},{v:.16e},{:.16e},{:.16e}", u.exp(), v.exp())?;
                }
            }
            None => {
                writeln!(w, "t,u,x")?;
                for (t, u) in self.times.iter().zip(self.u) {
                    writeln!(w, "{t:.16e},{u:.16e},{:.16e}", u.exp())?;
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn out_of_range(s: f64) -> bool {
    !(s <= LOG_OVERFLOW_GUARD)
}

struct Recorder {
    thinning: u64,
    record_dt: f64,
    u: Vec<f64>,
    v: Option<Vec<f64>>,
    increments: Option<Vec<[f64; 2]>>,
}

impl Recorder {
    fn new(cfg: &SimConfig, two_d: bool) -> Self {
        let n = cfg.record_len();
        Self {
            thinning: cfg.thinning,
            record_dt: cfg.dt * cfg.thinning as f64,
            u: Vec::with_capacity(n),
            v: two_d.then(|| Vec::with_capacity(n)),
            increments: cfg
                .keep_increments
                .then(|| Vec::with_capacity(cfg.steps() as usize)),
        }
    }

    #[inline]
    fn record(&mut self, step: u64, u: f64, v: f64) {
        if step % self.thinning == 0 {
            self.u.push(u);
            if let Some(vs) = &mut self.v {
                vs.push(v);
            }
        }
    }

    fn finish(self, mode: NoiseMode) -> Trajectory {
        let thinning = self.thinning;
        let dt = self.record_dt / thinning as f64;
        let times = (0..self.u.len())
            .map(|k| (k as u64 * thinning) as f64 * dt)
            .collect();
        Trajectory {
            times,
            u: self.u,
            v: self.v,
            record_dt: self.record_dt,
            mode,
            increments: self.increments,
        }
    }
}

fn overflow(step: u64, dt: f64, u: f64, v: f64) -> SimError {
    SimError::StepOverflow {
        step,
        t: step as f64 * dt,
        u,
        v,
    }
}

/// Full system driven by an arbitrary noise source.
pub fn simulate_with_noise<N: NoiseSource>(
    p: &ModelParams,
    cfg: &SimConfig,
    mut noise: N,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let dt = cfg.dt;
    let diff = diffusion_matrix(p, cfg.mode);
    let (mut u, mut v) = (cfg.x0.ln(), cfg.y0.ln());
    let mut rec = Recorder::new(cfg, true);
    rec.record(0, u, v);
    for step in 0..cfg.steps() {
        let dw = noise.increment(step, dt);
        if let Some(inc) = &mut rec.increments {
            inc.push(dw);
        }
        let a = log_drift_unchecked(p, u, v);
        let s = diff.apply(dw);
        u += a[0] * dt + s[0];
        v += a[1] * dt + s[1];
        if out_of_range(u) || out_of_range(v) {
            return Err(overflow(step + 1, dt, u, v));
        }
        rec.record(step + 1, u, v);
    }
    Ok(rec.finish(cfg.mode))
}

pub fn simulate_system(p: &ModelParams, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    if cfg.drift_only {
        simulate_with_noise(p, cfg, ZeroNoise)
    } else {
        simulate_with_noise(p, cfg, CounterNoise::new(cfg.seed, cfg.trajectory, cfg.mode))
    }
}

/// Independent trajectories `first..first + count` in parallel, in id order.
pub fn simulate_ensemble(
    p: &ModelParams,
    cfg: &SimConfig,
    first: u64,
    count: u64,
) -> Vec<Result<Trajectory, SimError>> {
    (first..first + count)
        .into_par_iter()
        .map(|id| {
            let c = SimConfig {
                trajectory: id,
                ..*cfg
            };
            simulate_system(p, &c)
        })
        .collect()
}

/// One-dimensional logistic diffusion `d ln z = (r - s^2/2 - k z) dt + s dW`.
fn logistic_log_step(z: f64, growth_minus_ito: f64, crowding: f64, s: f64, dt: f64, dw: f64) -> f64 {
    z + (growth_minus_ito - crowding * z.exp()) * dt + s * dw
}

fn boundary_with_noise<N: NoiseSource>(
    p: &ModelParams,
    cfg: &SimConfig,
    mut noise: N,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let c = p.coef();
    let dt = cfg.dt;
    let drift0 = p.prey_log_growth();
    let mut theta = cfg.x0.ln();
    let mut rec = Recorder::new(cfg, false);
    rec.record(0, theta, 0.0);
    for step in 0..cfg.steps() {
        let dw = noise.increment(step, dt);
        if let Some(inc) = &mut rec.increments {
            inc.push(dw);
        }
        theta = logistic_log_step(theta, drift0, c.b1, c.alpha, dt, dw[0]);
        if out_of_range(theta) {
            return Err(overflow(step + 1, dt, theta, f64::NAN));
        }
        rec.record(step + 1, theta, 0.0);
    }
    Ok(rec.finish(cfg.mode))
}

/// The prey without predators, driven by the same first-component
/// increments as [`simulate_system`] with the same config.
pub fn simulate_boundary(p: &ModelParams, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    if cfg.drift_only {
        boundary_with_noise(p, cfg, ZeroNoise)
    } else {
        boundary_with_noise(p, cfg, CounterNoise::new(cfg.seed, cfg.trajectory, cfg.mode))
    }
}

/// Step counts of violated pathwise orderings, checked at every step
/// (not only recorded ones). A step counts when the left side exceeds the
/// right side by more than the relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ComparisonCounts {
    pub steps: u64,
    pub x_above_phi: u64,
    pub y_above_psi: u64,
    pub y_above_ybar: u64,
    pub ybar_above_psi: u64,
    /// Steps violating `x <= phi` or `y <= min(psi, ybar)`.
    pub any: u64,
}

impl ComparisonCounts {
    pub fn violation_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.any as f64 / self.steps as f64
        }
    }
}

/// System together with its comparison processes, all sharing increments.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub system: Trajectory,
    /// Prey without predators.
    pub phi: Trajectory,
    /// Predator fed at the saturated rate `c2/m2`.
    pub psi: Trajectory,
    /// Predator fed on `phi` without interference.
    pub ybar: Trajectory,
    pub comparisons: ComparisonCounts,
}

pub const COMPARISON_REL_TOL: f64 = 1e-6;

pub fn simulate_coupled(p: &ModelParams, cfg: &SimConfig) -> Result<CoupledRun, SimError> {
    if cfg.drift_only {
        coupled_with_noise(p, cfg, ZeroNoise)
    } else {
        coupled_with_noise(p, cfg, CounterNoise::new(cfg.seed, cfg.trajectory, cfg.mode))
    }
}

pub fn coupled_with_noise<N: NoiseSource>(
    p: &ModelParams,
    cfg: &SimConfig,
    mut noise: N,
) -> Result<CoupledRun, SimError> {
    cfg.validate()?;
    let c = p.coef();
    let dt = cfg.dt;
    let diff = diffusion_matrix(p, cfg.mode);
    let prey0 = p.prey_log_growth();
    let pred0 = p.predator_log_decay();
    // In log space the tolerance x <= phi (1 + tol) reads u <= theta + ln(1 + tol).
    let slack = COMPARISON_REL_TOL.ln_1p();
    let second = match cfg.mode {
        NoiseMode::Independent => 1,
        NoiseMode::Shared => 0,
    };

    let (mut u, mut v) = (cfg.x0.ln(), cfg.y0.ln());
    let mut theta = u;
    let mut w_psi = v;
    let mut w_bar = v;
    let mut rec_sys = Recorder::new(cfg, true);
    let mut rec_phi = Recorder::new(cfg, false);
    let mut rec_psi = Recorder::new(cfg, false);
    let mut rec_bar = Recorder::new(cfg, false);
    rec_sys.record(0, u, v);
    rec_phi.record(0, theta, 0.0);
    rec_psi.record(0, w_psi, 0.0);
    rec_bar.record(0, w_bar, 0.0);
    let mut counts = ComparisonCounts::default();

    for step in 0..cfg.steps() {
        let dw = noise.increment(step, dt);
        if let Some(inc) = &mut rec_sys.increments {
            inc.push(dw);
        }
        let s = diff.apply(dw);
        let a = log_drift_unchecked(p, u, v);
        let phi = theta.exp();
        let bar_drift = pred0 - c.b2 * w_bar.exp() + c.c2 * phi / (c.m1 + c.m2 * phi);
        u += a[0] * dt + s[0];
        v += a[1] * dt + s[1];
        theta = logistic_log_step(theta, prey0, c.b1, c.alpha, dt, dw[0]);
        w_psi = logistic_log_step(w_psi, pred0 + c.c2 / c.m2, c.b2, c.beta, dt, dw[second]);
        w_bar += bar_drift * dt + s[1];
        if [u, v, theta, w_psi, w_bar].into_iter().any(out_of_range) {
            return Err(overflow(step + 1, dt, u, v));
        }

        counts.steps += 1;
        let xa = u > theta + slack;
        let ya = v > w_psi + slack;
        let yb = v > w_bar + slack;
        counts.x_above_phi += xa as u64;
        counts.y_above_psi += ya as u64;
        counts.y_above_ybar += yb as u64;
        counts.ybar_above_psi += (w_bar > w_psi + slack) as u64;
        counts.any += (xa || ya || yb) as u64;

        rec_sys.record(step + 1, u, v);
        rec_phi.record(step + 1, theta, 0.0);
        rec_psi.record(step + 1, w_psi, 0.0);
        rec_bar.record(step + 1, w_bar, 0.0);
    }
    Ok(CoupledRun {
        system: rec_sys.finish(cfg.mode),
        phi: rec_phi.finish(cfg.mode),
        psi: rec_psi.finish(cfg.mode),
        ybar: rec_bar.finish(cfg.mode),
        comparisons: counts,
    })
}
