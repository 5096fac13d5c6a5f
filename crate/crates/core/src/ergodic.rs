//! Long-run statistics of recorded paths: time averages, growth rates of the
//! log-states, occupation histograms and the occupation bounds for the box
//! `{0 < x <= H, hbar <= y <= H}`.

use crate::model::ModelParams;
use crate::sim::TrajectoryView;
use crate::threshold::BoundConstants;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

pub const DEFAULT_BURN_IN: f64 = 0.5;
pub const DEFAULT_LYAPUNOV_FLOOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ErgodicError {
    #[error("unknown functional '{0}'")]
    UnknownFunctional(String),
    #[error("trajectory has no recorded points")]
    EmptyTrajectory,
    #[error("functional needs the predator component, which this path does not have")]
    MissingComponent,
    #[error("horizon {horizon} is shorter than the required {floor}")]
    HorizonTooShort { horizon: f64, floor: f64 },
    #[error("histogram edges must have at least two strictly increasing finite values")]
    BadEdges,
    #[error("histograms are defined on different grids")]
    GridMismatch,
    #[error("box needs 0 < hbar < H (got hbar = {hbar}, H = {big_h})")]
    InvalidBox { hbar: f64, big_h: f64 },
}

/// Function of the state whose long-run average is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    XPow(f64),
    YPow(f64),
    /// Indicator of `x_lo <= x <= x_hi, y_lo <= y <= y_hi`.
    Box { x: (f64, f64), y: (f64, f64) },
    /// Predator intake `c2 x / (m1 + m2 x + m3 y)`.
    Response { c2: f64, m1: f64, m2: f64, m3: f64 },
}

impl Functional {
    pub fn response(p: &ModelParams) -> Self {
        let c = p.coef();
        Functional::Response {
            c2: c.c2,
            m1: c.m1,
            m2: c.m2,
            m3: c.m3,
        }
    }

    /// Parses `x`, `y`, `x^p`, `y^p`, `response` and
    /// `box(x_lo,x_hi,y_lo,y_hi)`. `response` needs the model parameters.
    pub fn parse(s: &str, p: Option<&ModelParams>) -> Result<Self, ErgodicError> {
        let unknown = || ErgodicError::UnknownFunctional(s.to_string());
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let power = |rest: &str| -> Result<f64, ErgodicError> {
            if rest.is_empty() {
                return Ok(1.0);
            }
            let e = rest.strip_prefix('^').ok_or_else(unknown)?;
            e.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(unknown)
        };
        if let Some(rest) = t.strip_prefix('x') {
            return Ok(Functional::XPow(power(rest)?));
        }
        if let Some(rest) = t.strip_prefix('y') {
            return Ok(Functional::YPow(power(rest)?));
        }
        if t == "response" {
            return p.map(Functional::response).ok_or_else(unknown);
        }
        if let Some(inner) = t.strip_prefix("box(").and_then(|r| r.strip_suffix(')')) {
            let v: Vec<f64> = inner
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| unknown()))
                .collect::<Result<_, _>>()?;
            if v.len() != 4 {
                return Err(unknown());
            }
            return Ok(Functional::Box {
                x: (v[0], v[1]),
                y: (v[2], v[3]),
            });
        }
        Err(unknown())
    }

    fn needs_y(&self) -> bool {
        !matches!(self, Functional::XPow(_))
    }

    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Functional::XPow(p) => pow(x, p),
            Functional::YPow(p) => pow(y, p),
            Functional::Box { x: (x0, x1), y: (y0, y1) } => {
                (x0 <= x && x <= x1 && y0 <= y && y <= y1) as u8 as f64
            }
            Functional::Response { c2, m1, m2, m3 } => c2 * x / (m1 + m2 * x + m3 * y),
        }
    }
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::XPow(p) if *p == 1.0 => write!(f, "x"),
            Functional::YPow(p) if *p == 1.0 => write!(f, "y"),
            Functional::XPow(p) => write!(f, "x^{p}"),
            Functional::YPow(p) => write!(f, "y^{p}"),
            Functional::Box { x, y } => write!(f, "box({},{},{},{})", x.0, x.1, y.0, y.1),
            Functional::Response { .. } => write!(f, "response"),
        }
    }
}

/// Streaming mean and variance (Welford), mergeable across chunks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        Self {
            count: n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.count as f64 * w,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Riemann time average over the recorded points, each weighted by the
/// recording interval.
pub fn time_average(traj: &TrajectoryView, f: &Functional) -> Result<f64, ErgodicError> {
    if traj.is_empty() {
        return Err(ErgodicError::EmptyTrajectory);
    }
    if f.needs_y() && traj.v.is_none() {
        return Err(ErgodicError::MissingComponent);
    }
    let mut acc = RunningStats::default();
    match traj.v {
        Some(v) => {
            for (u, v) in traj.u.iter().zip(v) {
                acc.push(f.eval(u.exp(), v.exp()));
            }
        }
        None => {
            for u in traj.u {
                acc.push(f.eval(u.exp(), 0.0));
            }
        }
    }
    Ok(acc.mean)
}

/// Standard error of the mean of a correlated series from `batches`
/// contiguous batch means.
pub fn batch_means_stderr(values: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2).min(values.len().max(2));
    let size = values.len() / batches;
    if size == 0 {
        return f64::NAN;
    }
    let mut acc = RunningStats::default();
    for b in 0..batches {
        let chunk = &values[b * size..(b + 1) * size];
        acc.push(chunk.iter().sum::<f64>() / size as f64);
    }
    acc.std_error()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    U,
    V,
}

/// Least-squares slope of a log-state against time over the second half of
/// the path.
pub fn lyapunov_exponent(
    traj: &TrajectoryView,
    component: Component,
    floor: f64,
) -> Result<f64, ErgodicError> {
    if traj.len() < 4 {
        return Err(ErgodicError::EmptyTrajectory);
    }
    let horizon = traj.times[traj.len() - 1] - traj.times[0];
    if horizon < floor {
        return Err(ErgodicError::HorizonTooShort { horizon, floor });
    }
    let series = match component {
        Component::U => traj.u,
        Component::V => traj.v.ok_or(ErgodicError::MissingComponent)?,
    };
    let half = traj.after_burn_in(0.5);
    let lo = traj.len() - half.len();
    let ts = &traj.times[lo..];
    let ys = &series[lo..];
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(ys) {
        let dt = t - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    Ok(sxy / sxx)
}

/// Strictly increasing bin edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edges(Vec<f64>);

impl Edges {
    pub fn new(edges: Vec<f64>) -> Result<Self, ErgodicError> {
        let ok = edges.len() >= 2
            && edges.iter().all(|e| e.is_finite())
            && edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self(edges))
        } else {
            Err(ErgodicError::BadEdges)
        }
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self, ErgodicError> {
        Self::new(
            (0..=bins)
                .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn bins(&self) -> usize {
        self.0.len() - 1
    }

    /// Bin of `x`; values outside the edges go to the first or last bin.
    fn bin(&self, x: f64) -> usize {
        let k = self.0.partition_point(|&e| e <= x);
        k.clamp(1, self.bins()) - 1
    }
}

/// Time-weighted histogram of recorded positions in population coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationHistogram {
    pub x_edges: Edges,
    pub y_edges: Option<Edges>,
    /// Row-major counts, `x` bin outermost.
    pub counts: Vec<u64>,
    pub total_time: f64,
    pub record_dt: f64,
}

impl OccupationHistogram {
    pub fn empty(x_edges: Edges, y_edges: Option<Edges>, record_dt: f64) -> Self {
        let cells = x_edges.bins() * y_edges.as_ref().map_or(1, Edges::bins);
        Self {
            x_edges,
            y_edges,
            counts: vec![0; cells],
            total_time: 0.0,
            record_dt,
        }
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.total_count();
        if n == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.x_edges == other.x_edges && self.y_edges == other.y_edges
    }

    /// Pools two histograms on the same grid.
    pub fn merge(&self, other: &Self) -> Result<Self, ErgodicError> {
        if !self.same_grid(other) || self.record_dt != other.record_dt {
            return Err(ErgodicError::GridMismatch);
        }
        let mut out = self.clone();
        for (a, b) in out.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        out.total_time = out.total_count() as f64 * out.record_dt;
        Ok(out)
    }
}

/// Histogram of `x` (when `y_edges` is `None`) or of `(x, y)`.
pub fn occupation_histogram(
    traj: &TrajectoryView,
    x_edges: Edges,
    y_edges: Option<Edges>,
) -> Result<OccupationHistogram, ErgodicError> {
    let mut h = OccupationHistogram::empty(x_edges, y_edges, traj.record_dt);
    match (&h.y_edges, traj.v) {
        (None, _) => {
            for u in traj.u {
                h.counts[h.x_edges.bin(u.exp())] += 1;
            }
        }
        (Some(ye), Some(v)) => {
            let ny = ye.bins();
            for (u, v) in traj.u.iter().zip(v) {
                let k = h.x_edges.bin(u.exp()) * ny + ye.bin(v.exp());
                h.counts[k] += 1;
            }
        }
        (Some(_), None) => return Err(ErgodicError::MissingComponent),
    }
    h.total_time = traj.len() as f64 * traj.record_dt;
    Ok(h)
}

/// Half the L1 distance between normalized histograms on a common grid.
pub fn tv_proxy(h1: &OccupationHistogram, h2: &OccupationHistogram) -> Result<f64, ErgodicError> {
    if !h1.same_grid(h2) {
        return Err(ErgodicError::GridMismatch);
    }
    let (w1, w2) = (h1.weights(), h2.weights());
    Ok(0.5 * w1.iter().zip(&w2).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// TV proxy between two paths on `windows` consecutive equal time windows.
pub fn tv_proxy_series(
    a: &TrajectoryView,
    b: &TrajectoryView,
    windows: usize,
    x_edges: &Edges,
    y_edges: &Edges,
) -> Result<Vec<f64>, ErgodicError> {
    let horizon = a.times.last().copied().ok_or(ErgodicError::EmptyTrajectory)?;
    let width = horizon / windows as f64;
    (0..windows)
        .map(|k| {
            let (t0, t1) = (k as f64 * width, (k + 1) as f64 * width);
            let ha = occupation_histogram(&a.window(t0, t1), x_edges.clone(), Some(y_edges.clone()))?;
            let hb = occupation_histogram(&b.window(t0, t1), x_edges.clone(), Some(y_edges.clone()))?;
            tv_proxy(&ha, &hb)
        })
        .collect()
}

/// Fraction of recorded time in `{0 < x <= H, hbar <= y <= H}`.
pub fn box_occupation(traj: &TrajectoryView, hbar: f64, big_h: f64) -> Result<f64, ErgodicError> {
    check_box(hbar, big_h)?;
    time_average(
        traj,
        &Functional::Box {
            x: (0.0, big_h),
            y: (hbar, big_h),
        },
    )
}

fn check_box(hbar: f64, big_h: f64) -> Result<(), ErgodicError> {
    if 0.0 < hbar && hbar < big_h && big_h.is_finite() {
        Ok(())
    } else {
        Err(ErgodicError::InvalidBox { hbar, big_h })
    }
}

/// Empirical counterparts of the three occupation bounds and, when the
/// constants are known, the bounds themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationBounds {
    pub hbar: f64,
    pub big_h: f64,
    /// Average of `1{y >= hbar}`; bounded below by `(m_bar - hbar)^2 / K^2`.
    pub y_at_least_hbar: f64,
    /// Average of `1{y >= H}`; bounded above by `K^1 / H`.
    pub y_at_least_h: f64,
    /// Average of `1{x >= H}`; bounded above by `K1 / H`.
    pub x_at_least_h: f64,
    pub y_at_least_hbar_floor: Option<f64>,
    pub y_at_least_h_cap: Option<f64>,
    pub x_at_least_h_cap: Option<f64>,
}

pub fn occupation_bound_check(
    traj: &TrajectoryView,
    hbar: f64,
    big_h: f64,
    constants: Option<&BoundConstants>,
) -> Result<OccupationBounds, ErgodicError> {
    check_box(hbar, big_h)?;
    let v = traj.v.ok_or(ErgodicError::MissingComponent)?;
    if traj.is_empty() {
        return Err(ErgodicError::EmptyTrajectory);
    }
    let (ln_hbar, ln_h) = (hbar.ln(), big_h.ln());
    let (mut a, mut b, mut c) = (0u64, 0u64, 0u64);
    for (u, v) in traj.u.iter().zip(v) {
        a += (*v >= ln_hbar) as u64;
        b += (*v >= ln_h) as u64;
        c += (*u >= ln_h) as u64;
    }
    let n = traj.len() as f64;
    Ok(OccupationBounds {
        hbar,
        big_h,
        y_at_least_hbar: a as f64 / n,
        y_at_least_h: b as f64 / n,
        x_at_least_h: c as f64 / n,
        y_at_least_hbar_floor: constants.and_then(|k| {
            let m = k.m_bar?;
            let kh2 = k.k_hat2?;
            (m > hbar).then(|| (m - hbar).powi(2) / kh2)
        }),
        y_at_least_h_cap: constants.and_then(|k| k.k_hat1.map(|kh1| kh1 / big_h)),
        x_at_least_h_cap: constants.map(|k| k.k1 / big_h),
    })
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// a continuous `cdf`, computed exactly on the sorted sample.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Summary of one path's long-run behavior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub horizon: f64,
    pub burn_in: f64,
    pub time_averages: BTreeMap<String, f64>,
    pub lyapunov_v: Option<f64>,
    pub box_occupation: Option<f64>,
    pub box_occupation_floor: Option<f64>,
    pub occupation_bounds: Option<OccupationBounds>,
}

/// Averages, growth rate and box occupation after discarding `burn_in` of
/// the horizon.
pub fn ergodic_report(
    traj: &TrajectoryView,
    functionals: &[Functional],
    burn_in: f64,
    constants: Option<&BoundConstants>,
) -> Result<ErgodicReport, ErgodicError> {
    let kept = traj.after_burn_in(burn_in);
    let mut time_averages = BTreeMap::new();
    for f in functionals {
        time_averages.insert(f.to_string(), time_average(&kept, f)?);
    }
    let lyapunov_v = match traj.v {
        Some(_) => lyapunov_exponent(traj, Component::V, DEFAULT_LYAPUNOV_FLOOR).ok(),
        None => None,
    };
    let boxed = constants.and_then(|k| k.default_box());
    let (box_occ, bounds) = match (boxed, traj.v) {
        (Some((hbar, big_h)), Some(_)) => (
            Some(box_occupation(&kept, hbar, big_h)?),
            Some(occupation_bound_check(&kept, hbar, big_h, constants)?),
        ),
        _ => (None, None),
    };
    Ok(ErgodicReport {
        horizon: traj.times.last().copied().unwrap_or(0.0),
        burn_in,
        time_averages,
        lyapunov_v,
        box_occupation: box_occ,
        box_occupation_floor: constants.and_then(|k| k.box_occupation_floor()),
        occupation_bounds: bounds,
    })
}
