//! Scenario files. Every table rejects unknown keys.

use predprey_core::model::{Coefficients, ModelParams, NoiseMode, DEFAULT_EPS_CRITICAL};
use predprey_core::threshold::DEFAULT_LAMBDA_TOL;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub eps_critical: f64,
    pub params: Coefficients,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub classify: ClassifySection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub support: SupportSection,
    #[serde(default)]
    pub lie_rank: LieRankSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub limits: Limits,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_CRITICAL
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub x0: f64,
    pub y0: f64,
    pub mode: NoiseMode,
    pub thinning: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 100.0,
            x0: 1.0,
            y0: 1.0,
            mode: NoiseMode::Independent,
            thinning: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub tol: f64,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            tol: DEFAULT_LAMBDA_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub trajectories: u64,
    /// Also run the comparison processes and count ordering violations.
    pub coupled: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            trajectories: 1,
            coupled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSection {
    pub trajectories: u64,
    pub burn_in: f64,
    pub functionals: Vec<String>,
    /// Second initial condition for the TV proxy; both or neither.
    pub alt_x0: Option<f64>,
    pub alt_y0: Option<f64>,
    pub tv_windows: usize,
    pub histogram: HistogramSection,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self {
            trajectories: 4,
            burn_in: 0.5,
            functionals: ["x", "y", "x^2", "y^2", "response"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            alt_x0: None,
            alt_y0: None,
            tv_windows: 2,
            histogram: HistogramSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSection {
    pub x_lo: f64,
    pub x_hi: f64,
    pub x_bins: usize,
    pub y_lo: f64,
    pub y_hi: f64,
    pub y_bins: usize,
}

impl Default for HistogramSection {
    fn default() -> Self {
        Self {
            x_lo: 0.0,
            x_hi: 6.0,
            x_bins: 30,
            y_lo: 0.0,
            y_hi: 4.0,
            y_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportSection {
    pub trajectories: u64,
    pub burn_in: f64,
    pub margin: f64,
}

impl Default for SupportSection {
    fn default() -> Self {
        Self {
            trajectories: 1,
            burn_in: 0.5,
            margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct LieRankSection {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub depth: usize,
    pub variants: Vec<String>,
}

impl Default for LieRankSection {
    fn default() -> Self {
        Self {
            lo: -5.0,
            hi: 5.0,
            n: 21,
            depth: 3,
            variants: vec!["full".into(), "ideal".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axes: Vec<AxisSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// Either explicit `values`, or `lo`, `hi` and `steps`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub max_trajectories: u64,
    /// Steps per trajectory.
    pub max_steps: u64,
    pub max_cells: u64,
    pub max_grid_points: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_trajectories: 1024,
            max_steps: 1_000_000_000,
            max_cells: predprey_core::threshold::DEFAULT_CELL_CAP,
            max_grid_points: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path, l, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

/// A parsed scenario with the source text kept for error locations.
pub struct Loaded {
    pub config: ScenarioConfig,
    pub params: ModelParams,
    pub text: String,
    pub path: String,
}

impl Loaded {
    pub fn error(&self, section: Option<&str>, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: locate_key(&self.text, section, key),
            message: message.into(),
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: shown.clone(),
        line: None,
        message: format!("cannot read: {e}"),
    })?;
    parse(&text, &shown)
}

pub fn parse(text: &str, path: &str) -> Result<Loaded, ConfigError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError {
        path: path.to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let params = ModelParams::new(config.params).map_err(|e| {
        let key = e.violations.first().map(|v| v.coefficient()).unwrap_or("");
        ConfigError {
            path: path.to_string(),
            line: locate_key(text, Some("params"), key),
            message: e.to_string(),
        }
    })?;
    let loaded = Loaded {
        config,
        params,
        text: text.to_string(),
        path: path.to_string(),
    };
    loaded.check_common()?;
    Ok(loaded)
}

impl Loaded {
    fn check_common(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        if !(c.eps_critical >= 0.0 && c.eps_critical.is_finite()) {
            return Err(self.error(None, "eps_critical", "eps_critical must be finite and >= 0"));
        }
        let s = &c.sim;
        let checks: [(bool, &str, &str); 5] = [
            (s.dt > 0.0 && s.dt.is_finite(), "dt", "dt must be positive and finite"),
            (
                s.horizon >= s.dt && s.horizon.is_finite(),
                "horizon",
                "horizon must be finite and at least dt",
            ),
            (s.x0 > 0.0 && s.x0.is_finite(), "x0", "x0 must be positive and finite"),
            (s.y0 > 0.0 && s.y0.is_finite(), "y0", "y0 must be positive and finite"),
            (s.thinning >= 1, "thinning", "thinning must be at least 1"),
        ];
        for (ok, key, msg) in checks {
            if !ok {
                return Err(self.error(Some("sim"), key, msg));
            }
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (or before any table when
/// `section` is `None`), falling back to the table header.
pub fn locate_key(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[') {
            let name = name.trim_start_matches('[').trim_end_matches(']').trim();
            current = Some(name.to_string());
            if Some(name) == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if !key.is_empty() && k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    header
}
