//! The six analyses. Each writes its files into the output directory and
//! records their names; `main` digests them into the manifest.

use crate::config::{AxisSection, Loaded, Scale};
use predprey_core::ergodic::{
    ergodic_report, occupation_histogram, tv_proxy_series, Edges, ErgodicReport, Functional,
    OccupationHistogram, RunningStats,
};
use predprey_core::geometry::{
    invariant_control_set, square_grid, support_membership, verify_hormander,
    ControlSetDescriptor, GeometryError, LieRankReport, Variant, MAX_DEPTH,
};
use predprey_core::model::{Coefficients, NoiseMode, Regime};
use predprey_core::sim::{simulate_coupled, simulate_system, ComparisonCounts, SimConfig, SimError, Trajectory};
use predprey_core::threshold::{
    lambda_quadrature, sweep, threshold_report, BoundConstants, SweepAxis, SweepError, SweepSpec,
    SweepSummary, ThresholdError, ThresholdReport,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Cap(String),
    Io(io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 4,
            Failure::Cap(_) => 5,
            Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical abort: {m}"),
            Failure::Cap(m) => write!(f, "resource cap exceeded: {m}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(m) => Failure::Config(m),
            e @ SimError::StepOverflow { .. } => Failure::Numerical(e.to_string()),
        }
    }
}

/// Result of a successful analysis.
pub struct Success {
    pub exit_code: i32,
    pub summary: Option<String>,
}

impl Success {
    fn ok() -> Self {
        Self {
            exit_code: 0,
            summary: None,
        }
    }
}

pub struct Context {
    pub loaded: Loaded,
    pub seed: u64,
    pub eps_critical: f64,
    pub out: PathBuf,
    /// Output files written so far, relative to `out`.
    pub files: Vec<String>,
}

impl Context {
    fn write(&mut self, name: &str, contents: &[u8]) -> io::Result<()> {
        std::fs::write(self.out.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn sim_config(&self, mode: NoiseMode) -> SimConfig {
        let s = &self.loaded.config.sim;
        SimConfig {
            mode,
            thinning: s.thinning,
            ..SimConfig::new(s.dt, s.horizon, s.x0, s.y0, self.seed)
        }
    }

    fn check_trajectories(&self, section: &str, count: u64) -> Result<(), Failure> {
        if count == 0 {
            return Err(Failure::Config(
                self.loaded.error(Some(section), "trajectories", "trajectories must be at least 1").to_string(),
            ));
        }
        let cap = self.loaded.config.limits.max_trajectories;
        if count > cap {
            return Err(Failure::Cap(format!("{count} trajectories requested, cap is {cap}")));
        }
        let steps = self.sim_config(NoiseMode::Independent).steps();
        let cap = self.loaded.config.limits.max_steps;
        if steps > cap {
            return Err(Failure::Cap(format!("{steps} steps per trajectory, cap is {cap}")));
        }
        Ok(())
    }

    fn config_error(&self, section: Option<&str>, key: &str, msg: impl Into<String>) -> Failure {
        Failure::Config(self.loaded.error(section, key, msg).to_string())
    }
}

/// 17 significant digits, round-trip exact.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn opt_bool(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

fn threshold_failure(e: ThresholdError) -> Failure {
    Failure::Numerical(e.to_string())
}

// ---------------------------------------------------------------- classify

#[derive(Serialize)]
struct ClassifyOut<'a> {
    params: &'a Coefficients,
    eps_critical: f64,
    report: &'a ThresholdReport,
}

pub fn classify(ctx: &mut Context) -> Result<Success, Failure> {
    let tol = ctx.loaded.config.classify.tol;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ctx.config_error(Some("classify"), "tol", "tol must be positive"));
    }
    let p = ctx.loaded.params;
    let report = threshold_report(&p, ctx.eps_critical, tol).map_err(threshold_failure)?;
    ctx.write_json(
        "report.json",
        &ClassifyOut {
            params: p.coef(),
            eps_critical: ctx.eps_critical,
            report: &report,
        },
    )?;
    let summary = match report.lambda {
        Some(l) => format!("lambda={l:.6} regime={}", report.regime),
        None => format!("regime={}", report.regime),
    };
    Ok(Success {
        exit_code: if report.regime == Regime::Critical { 3 } else { 0 },
        summary: Some(summary),
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateEntry {
    id: u64,
    file: String,
    records: usize,
    final_x: f64,
    final_y: f64,
    comparisons: Option<ComparisonCounts>,
    violation_fraction: Option<f64>,
}

#[derive(Serialize)]
struct SimulateOut {
    config: SimConfig,
    trajectories: Vec<SimulateEntry>,
}

fn coupled_csv(system: &Trajectory, phi: &Trajectory, psi: &Trajectory, ybar: &Trajectory) -> String {
    let mut s = String::from("t,x,y,phi,psi,ybar\n");
    let v = system.v.as_deref().unwrap_or(&[]);
    for k in 0..system.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            num(system.times[k]),
            num(system.u[k].exp()),
            num(v[k].exp()),
            num(phi.u[k].exp()),
            num(psi.u[k].exp()),
            num(ybar.u[k].exp())
        );
    }
    s
}

pub fn simulate(ctx: &mut Context) -> Result<Success, Failure> {
    let sec = ctx.loaded.config.simulate.clone();
    ctx.check_trajectories("simulate", sec.trajectories)?;
    let p = ctx.loaded.params;
    let cfg = ctx.sim_config(ctx.loaded.config.sim.mode);
    let out = ctx.out.clone();
    // Each worker writes its own file; the collector keeps id order.
    let results: Vec<Result<SimulateEntry, Failure>> = (0..sec.trajectories)
        .into_par_iter()
        .map(|id| {
            let c = SimConfig { trajectory: id, ..cfg };
            let (traj, csv, comparisons) = if sec.coupled {
                let run = simulate_coupled(&p, &c)?;
                let csv = coupled_csv(&run.system, &run.phi, &run.psi, &run.ybar);
                (run.system, csv.into_bytes(), Some(run.comparisons))
            } else {
                let t = simulate_system(&p, &c)?;
                let mut buf = Vec::new();
                t.write_csv(&mut buf)?;
                (t, buf, None)
            };
            let file = format!("traj_{id:04}.csv");
            std::fs::write(out.join(&file), csv)?;
            Ok(SimulateEntry {
                id,
                file,
                records: traj.len(),
                final_x: traj.u.last().map_or(f64::NAN, |u| u.exp()),
                final_y: traj.v.as_ref().and_then(|v| v.last()).map_or(f64::NAN, |v| v.exp()),
                violation_fraction: comparisons.map(|c| c.violation_fraction()),
                comparisons,
            })
        })
        .collect();
    let mut entries = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(e) => {
                ctx.files.push(e.file.clone());
                entries.push(e);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    ctx.write_json(
        "simulate.json",
        &SimulateOut {
            config: cfg,
            trajectories: entries,
        },
    )?;
    Ok(Success::ok())
}

// ---------------------------------------------------------------- ergodic

#[derive(Serialize)]
struct Summary {
    count: u64,
    mean: f64,
    std_error: f64,
}

impl From<RunningStats> for Summary {
    fn from(s: RunningStats) -> Self {
        Self {
            count: s.count,
            mean: s.mean,
            std_error: s.std_error(),
        }
    }
}

#[derive(Serialize)]
struct ErgodicEntry {
    id: u64,
    report: ErgodicReport,
    /// TV proxy against the run from the alternative initial condition,
    /// one value per time window.
    tv_proxy: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ErgodicMerged {
    time_averages: BTreeMap<String, Summary>,
    lyapunov_v: Summary,
    /// Trajectories whose box occupation exceeds the guaranteed floor.
    box_occupation_above_floor: Option<usize>,
    /// Trajectories whose mean of y after burn-in is at least m_bar.
    mean_y_above_m_bar: Option<usize>,
    /// Trajectories whose TV proxy on the last window is below the first.
    tv_proxy_decreasing: Option<usize>,
}

#[derive(Serialize)]
struct ErgodicOut {
    trajectories: u64,
    burn_in: f64,
    lambda: Option<f64>,
    constants: Option<BoundConstants>,
    per_trajectory: Vec<ErgodicEntry>,
    merged: ErgodicMerged,
}

fn histogram_csv(h: &OccupationHistogram) -> String {
    let mut s = String::from("x_lo,x_hi,y_lo,y_hi,weight\n");
    let xe = h.x_edges.as_slice();
    let ye = h.y_edges.as_ref().map(|e| e.as_slice()).unwrap_or(&[0.0, 0.0]);
    let ny = ye.len() - 1;
    for (k, w) in h.weights().iter().enumerate() {
        let (i, j) = (k / ny, k % ny);
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            num(xe[i]),
            num(xe[i + 1]),
            num(ye[j]),
            num(ye[j + 1]),
            num(*w)
        );
    }
    s
}

pub fn ergodic(ctx: &mut Context) -> Result<Success, Failure> {
    let sec = ctx.loaded.config.ergodic.clone();
    ctx.check_trajectories("ergodic", sec.trajectories)?;
    if !(0.0..1.0).contains(&sec.burn_in) {
        return Err(ctx.config_error(Some("ergodic"), "burn_in", "burn_in must be in [0, 1)"));
    }
    let p = ctx.loaded.params;
    let functionals = sec
        .functionals
        .iter()
        .map(|s| Functional::parse(s, Some(&p)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ctx.config_error(Some("ergodic"), "functionals", e.to_string()))?;
    let alt = match (sec.alt_x0, sec.alt_y0) {
        (None, None) => None,
        (Some(x), Some(y)) if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() => Some((x, y)),
        _ => {
            return Err(ctx.config_error(
                Some("ergodic"),
                "alt_x0",
                "alt_x0 and alt_y0 must both be given and positive",
            ))
        }
    };
    if alt.is_some() && sec.tv_windows < 2 {
        return Err(ctx.config_error(Some("ergodic"), "tv_windows", "tv_windows must be at least 2"));
    }
    let hs = &sec.histogram;
    let edges = Edges::uniform(hs.x_lo, hs.x_hi, hs.x_bins)
        .and_then(|x| Edges::uniform(hs.y_lo, hs.y_hi, hs.y_bins).map(|y| (x, y)));
    let (xe, ye) = edges.map_err(|e| ctx.config_error(Some("ergodic.histogram"), "", e.to_string()))?;

    let lambda = match lambda_quadrature(&p, predprey_core::threshold::DEFAULT_LAMBDA_TOL) {
        Ok(est) => Some(est.lambda),
        Err(ThresholdError::ToleranceNotMet { value, .. }) => Some(value),
        Err(_) => None,
    };
    let constants = BoundConstants::from_params(&p, lambda.filter(|l| *l > 0.0)).ok();
    let cfg = ctx.sim_config(ctx.loaded.config.sim.mode);

    let results: Vec<Result<(ErgodicEntry, OccupationHistogram), Failure>> = (0..sec.trajectories)
        .into_par_iter()
        .map(|id| {
            let c = SimConfig { trajectory: id, ..cfg };
            let t = simulate_system(&p, &c)?;
            let report = ergodic_report(&t.view(), &functionals, sec.burn_in, constants.as_ref())
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            let hist = occupation_histogram(&t.after_burn_in(sec.burn_in), xe.clone(), Some(ye.clone()))
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            let tv = match alt {
                Some((x0, y0)) => {
                    // Same noise streams, different start.
                    let b = simulate_system(&p, &SimConfig { x0, y0, ..c })?;
                    Some(
                        tv_proxy_series(&t.view(), &b.view(), sec.tv_windows, &xe, &ye)
                            .map_err(|e| Failure::Numerical(e.to_string()))?,
                    )
                }
                None => None,
            };
            Ok((
                ErgodicEntry {
                    id,
                    report,
                    tv_proxy: tv,
                },
                hist,
            ))
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut pooled: Option<OccupationHistogram> = None;
    for r in results {
        let (entry, hist) = r?;
        pooled = Some(match pooled {
            None => hist,
            Some(acc) => acc.merge(&hist).map_err(|e| Failure::Numerical(e.to_string()))?,
        });
        entries.push(entry);
    }

    let mut averages: BTreeMap<String, RunningStats> = BTreeMap::new();
    let mut lyap = RunningStats::default();
    for e in &entries {
        for (k, v) in &e.report.time_averages {
            averages.entry(k.clone()).or_default().push(*v);
        }
        if let Some(l) = e.report.lyapunov_v {
            lyap.push(l);
        }
    }
    let box_above = constants.and_then(|k| k.box_occupation_floor()).map(|floor| {
        entries
            .iter()
            .filter(|e| e.report.box_occupation.is_some_and(|o| o > floor))
            .count()
    });
    let y_above = match (constants.and_then(|k| k.m_bar), functionals.contains(&Functional::YPow(1.0))) {
        (Some(m), true) => Some(
            entries
                .iter()
                .filter(|e| e.report.time_averages.get("y").is_some_and(|y| *y >= m))
                .count(),
        ),
        _ => None,
    };
    let tv_dec = alt.map(|_| {
        entries
            .iter()
            .filter(|e| {
                let tv = e.tv_proxy.as_deref().unwrap_or(&[]);
                matches!((tv.first(), tv.last()), (Some(a), Some(b)) if b < a)
            })
            .count()
    });
    let out = ErgodicOut {
        trajectories: sec.trajectories,
        burn_in: sec.burn_in,
        lambda,
        constants,
        per_trajectory: entries,
        merged: ErgodicMerged {
            time_averages: averages.into_iter().map(|(k, s)| (k, s.into())).collect(),
            lyapunov_v: lyap.into(),
            box_occupation_above_floor: box_above,
            mean_y_above_m_bar: y_above,
            tv_proxy_decreasing: tv_dec,
        },
    };
    ctx.write_json("ergodic.json", &out)?;
    if let Some(h) = pooled {
        ctx.write("histogram.csv", histogram_csv(&h).as_bytes())?;
    }
    Ok(Success::ok())
}

// ---------------------------------------------------------------- support

#[derive(Serialize)]
struct SupportOut {
    descriptor: ControlSetDescriptor,
    margin: f64,
    burn_in: f64,
    fractions: Vec<f64>,
}

pub fn support(ctx: &mut Context) -> Result<Success, Failure> {
    let sec = ctx.loaded.config.support.clone();
    ctx.check_trajectories("support", sec.trajectories)?;
    if !(0.0..1.0).contains(&sec.burn_in) {
        return Err(ctx.config_error(Some("support"), "burn_in", "burn_in must be in [0, 1)"));
    }
    if !(sec.margin >= 0.0 && sec.margin.is_finite()) {
        return Err(ctx.config_error(Some("support"), "margin", "margin must be finite and >= 0"));
    }
    let p = ctx.loaded.params;
    let descriptor = invariant_control_set(&p).map_err(|e| match e {
        GeometryError::LambdaNotPositive(_) => ctx.config_error(Some("params"), "", e.to_string()),
        e => Failure::Numerical(e.to_string()),
    })?;
    // The support analysis is about the degenerate, shared-noise system.
    let cfg = ctx.sim_config(NoiseMode::Shared);
    let fractions = (0..sec.trajectories)
        .into_par_iter()
        .map(|id| {
            let t = simulate_system(&p, &SimConfig { trajectory: id, ..cfg })?;
            support_membership(&t.after_burn_in(sec.burn_in), &descriptor, sec.margin)
                .map_err(|e| Failure::Numerical(e.to_string()))
        })
        .collect::<Result<Vec<f64>, Failure>>()?;
    let mut csv = String::from("trajectory,fraction\n");
    for (id, f) in fractions.iter().enumerate() {
        let _ = writeln!(csv, "{id},{}", num(*f));
    }
    ctx.write("support.csv", csv.as_bytes())?;
    ctx.write_json(
        "support.json",
        &SupportOut {
            descriptor,
            margin: sec.margin,
            burn_in: sec.burn_in,
            fractions,
        },
    )?;
    Ok(Success::ok())
}

// ---------------------------------------------------------------- lie-rank

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::Ideal => "ideal",
    }
}

pub fn lie_rank(ctx: &mut Context) -> Result<Success, Failure> {
    let sec = ctx.loaded.config.lie_rank.clone();
    if sec.depth == 0 || sec.depth > MAX_DEPTH {
        return Err(ctx.config_error(
            Some("lie_rank"),
            "depth",
            format!("depth must be between 1 and {MAX_DEPTH}"),
        ));
    }
    if sec.n == 0 || !(sec.lo <= sec.hi) || !sec.lo.is_finite() || !sec.hi.is_finite() {
        return Err(ctx.config_error(Some("lie_rank"), "n", "grid needs n >= 1 and lo <= hi"));
    }
    let points = (sec.n as u64).saturating_mul(sec.n as u64);
    let cap = ctx.loaded.config.limits.max_grid_points;
    if points > cap {
        return Err(Failure::Cap(format!("{points} grid points, cap is {cap}")));
    }
    let variants = sec
        .variants
        .iter()
        .map(|s| match s.as_str() {
            "full" => Ok(Variant::Full),
            "ideal" => Ok(Variant::Ideal),
            other => Err(ctx.config_error(
                Some("lie_rank"),
                "variants",
                format!("unknown variant '{other}' (expected \"full\" or \"ideal\")"),
            )),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p = ctx.loaded.params;
    let grid = square_grid(sec.lo, sec.hi, sec.n);
    let reports = variants
        .iter()
        .map(|&v| verify_hormander(&p, &grid, sec.depth, v).map_err(|e| Failure::Numerical(e.to_string())))
        .collect::<Result<Vec<LieRankReport>, _>>()?;
    let mut csv = String::from("variant,u,v,rank,s1,s2\n");
    for r in &reports {
        for pt in &r.points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                variant_name(r.variant),
                num(pt.u),
                num(pt.v),
                pt.rank,
                num(pt.singular_values[0]),
                num(pt.singular_values[1])
            );
        }
    }
    ctx.write("lie_rank.csv", csv.as_bytes())?;
    ctx.write_json("lie_rank.json", &reports)?;
    Ok(Success::ok())
}

// ---------------------------------------------------------------- sweep

fn build_axis(ctx: &Context, a: &AxisSection) -> Result<SweepAxis, Failure> {
    let bad = |m: &str| ctx.config_error(Some("sweep.axes"), "name", format!("axis '{}': {m}", a.name));
    let r = match (&a.values, a.lo, a.hi, a.steps) {
        (Some(v), None, None, None) => Ok(SweepAxis::values(&a.name, v.clone())),
        (None, Some(lo), Some(hi), Some(steps)) => match a.scale {
            Scale::Linear => SweepAxis::linear(&a.name, lo, hi, steps),
            Scale::Log => SweepAxis::log(&a.name, lo, hi, steps),
        },
        _ => return Err(bad("give either values, or lo, hi and steps")),
    };
    r.map_err(|e| bad(&e.to_string()))
}

#[derive(Serialize)]
struct SweepOut<'a> {
    axes: &'a [SweepAxis],
    eps_critical: f64,
    cells: usize,
    summary: SweepSummary,
}

pub fn sweep_cmd(ctx: &mut Context) -> Result<Success, Failure> {
    let sec = ctx.loaded.config.sweep.clone();
    if sec.axes.is_empty() {
        return Err(ctx.config_error(Some("sweep"), "axes", "sweep needs at least one axis"));
    }
    let axes = sec
        .axes
        .iter()
        .map(|a| build_axis(ctx, a))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SweepSpec {
        cell_cap: ctx.loaded.config.limits.max_cells,
        ..SweepSpec::new(*ctx.loaded.params.coef(), axes.clone(), ctx.eps_critical)
    };
    let table = sweep(&spec).map_err(|e| match e {
        SweepError::GridTooLarge { .. } => Failure::Cap(e.to_string()),
        SweepError::Threshold { .. } => Failure::Numerical(e.to_string()),
        e => ctx.config_error(Some("sweep"), "axes", e.to_string()),
    })?;
    let mut csv = table.axes.join(",");
    csv.push_str(",lambda,regime,ji,lw_applicable,lw_extinct,lw_persist\n");
    for row in &table.rows {
        for x in &row.point {
            csv.push_str(&num(*x));
            csv.push(',');
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            opt_num(row.lambda),
            row.regime,
            row.ji.as_str(),
            row.lw.applicable,
            opt_bool(row.lw.extinction),
            opt_bool(row.lw.persistence)
        );
    }
    ctx.write("sweep.csv", csv.as_bytes())?;
    ctx.write_json(
        "sweep.json",
        &SweepOut {
            axes: &axes,
            eps_critical: ctx.eps_critical,
            cells: table.rows.len(),
            summary: table.summary,
        },
    )?;
    Ok(Success::ok())
}
