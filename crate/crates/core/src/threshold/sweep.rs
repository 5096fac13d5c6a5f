//! Regime maps over coefficient grids.

use super::{lambda_quadrature, lw_condition, ji_condition, regime_for, JiCondition, LwFlags};
use super::{ThresholdError, DEFAULT_LAMBDA_TOL};
use crate::model::{Coefficients, ModelParams, ParamError, Regime};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_CELL_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("sweep grid has no axes or an axis with no points")]
    EmptyGrid,
    #[error("axis '{0}' is not a model coefficient")]
    UnknownCoefficient(String),
    #[error("axis '{axis}' contains a non-finite value")]
    NonFiniteAxis { axis: String },
    #[error("axis '{axis}': {reason}")]
    BadRange { axis: String, reason: &'static str },
    #[error("grid has {cells} cells, above the cap of {cap}")]
    GridTooLarge { cells: u64, cap: u64 },
    #[error("invalid parameters at grid cell {cell}: {source}")]
    InvalidCell { cell: usize, source: ParamError },
    #[error("threshold failed at grid cell {cell}: {source}")]
    Threshold { cell: usize, source: ThresholdError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn values(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            values,
        }
    }

    /// `steps` equally spaced points from `lo` to `hi` inclusive.
    pub fn linear(name: &str, lo: f64, hi: f64, steps: usize) -> Result<Self, SweepError> {
        let values = match steps {
            0 => Vec::new(),
            1 => vec![lo],
            n => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Ok(Self::values(name, values))
    }

    /// `steps` points equally spaced in log scale from `lo` to `hi` inclusive.
    pub fn log(name: &str, lo: f64, hi: f64, steps: usize) -> Result<Self, SweepError> {
        if !(lo > 0.0 && hi > 0.0) {
            return Err(SweepError::BadRange {
                axis: name.to_string(),
                reason: "log axis needs positive endpoints",
            });
        }
        let mut axis = Self::linear(name, lo.log10(), hi.log10(), steps)?;
        for v in &mut axis.values {
            *v = 10f64.powf(*v);
        }
        // Keep the endpoints exact.
        if let Some(first) = axis.values.first_mut() {
            *first = lo;
        }
        if steps > 1 {
            *axis.values.last_mut().expect("nonempty") = hi;
        }
        Ok(axis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Coefficients,
    pub axes: Vec<SweepAxis>,
    pub eps_critical: f64,
    pub cell_cap: u64,
}

impl SweepSpec {
    pub fn new(base: Coefficients, axes: Vec<SweepAxis>, eps_critical: f64) -> Self {
        Self {
            base,
            axes,
            eps_critical,
            cell_cap: DEFAULT_CELL_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Coordinates of the cell, one per axis.
    pub point: Vec<f64>,
    pub lambda: Option<f64>,
    pub regime: Regime,
    pub ji: JiCondition,
    pub lw: LwFlags,
}

/// Region counts. Critical cells count only as critical; cells where the
/// prey dies out count only under `both_extinct`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SweepSummary {
    pub coexistence_with_ji: usize,
    pub coexistence_without_ji: usize,
    pub predator_extinct: usize,
    pub critical: usize,
    pub both_extinct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axes: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

fn validate(spec: &SweepSpec) -> Result<u64, SweepError> {
    if spec.axes.is_empty() || spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(SweepError::EmptyGrid);
    }
    let mut cells: u64 = 1;
    for axis in &spec.axes {
        if !Coefficients::NAMES.contains(&axis.name.as_str()) {
            return Err(SweepError::UnknownCoefficient(axis.name.clone()));
        }
        if axis.values.iter().any(|v| !v.is_finite()) {
            return Err(SweepError::NonFiniteAxis {
                axis: axis.name.clone(),
            });
        }
        cells = cells.saturating_mul(axis.values.len() as u64);
    }
    if cells > spec.cell_cap {
        return Err(SweepError::GridTooLarge {
            cells,
            cap: spec.cell_cap,
        });
    }
    Ok(cells)
}

/// Coordinates of cell `index`; the last axis varies fastest.
fn cell_point(axes: &[SweepAxis], mut index: usize) -> Vec<f64> {
    let mut point = vec![0.0; axes.len()];
    for (k, axis) in axes.iter().enumerate().rev() {
        let n = axis.values.len();
        point[k] = axis.values[index % n];
        index /= n;
    }
    point
}

fn evaluate(spec: &SweepSpec, cell: usize) -> Result<SweepRow, SweepError> {
    let point = cell_point(&spec.axes, cell);
    let mut raw = spec.base;
    for (axis, &v) in spec.axes.iter().zip(&point) {
        raw.set(&axis.name, v);
    }
    let p = ModelParams::new(raw).map_err(|source| SweepError::InvalidCell { cell, source })?;
    let lambda = if p.prey_persists() {
        match lambda_quadrature(&p, DEFAULT_LAMBDA_TOL) {
            Ok(est) => Some(est.lambda),
            Err(ThresholdError::ToleranceNotMet { value, .. }) => Some(value),
            Err(source) => return Err(SweepError::Threshold { cell, source }),
        }
    } else {
        None
    };
    let regime = match lambda {
        Some(l) => regime_for(&p, l, spec.eps_critical),
        None => Regime::BothExtinct,
    };
    Ok(SweepRow {
        point,
        lambda,
        regime,
        ji: ji_condition(&p),
        lw: lw_condition(&p),
    })
}

/// Evaluates every grid cell in parallel; rows come back in grid order.
pub fn sweep(spec: &SweepSpec) -> Result<SweepTable, SweepError> {
    let cells = validate(spec)? as usize;
    let rows = (0..cells)
        .into_par_iter()
        .map(|cell| evaluate(spec, cell))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = SweepSummary::default();
    for row in &rows {
        match row.regime {
            Regime::Coexistence if row.ji == JiCondition::Yes => summary.coexistence_with_ji += 1,
            Regime::Coexistence => summary.coexistence_without_ji += 1,
            Regime::PredatorExtinct => summary.predator_extinct += 1,
            Regime::Critical => summary.critical += 1,
            Regime::BothExtinct => summary.both_extinct += 1,
        }
    }
    Ok(SweepTable {
        axes: spec.axes.iter().map(|a| a.name.clone()).collect(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b2_sweep_finds_coexistence_outside_ji() {
        let axis = SweepAxis::log("b2", 1e-4, 10.0, 9).unwrap();
        assert_eq!(axis.values.len(), 9);
        assert!((axis.values[4] - 10f64.powf(-1.5)).abs() < 1e-15);
        let table = sweep(&SweepSpec::new(Coefficients::reference(), vec![axis], 1e-3)).unwrap();
        assert_eq!(table.rows.len(), 9);
        assert!(table
            .rows
            .iter()
            .any(|r| r.regime == Regime::Coexistence && r.ji == JiCondition::No));
        assert!(table.summary.coexistence_without_ji >= 1);
        let total = table.summary.coexistence_with_ji
            + table.summary.coexistence_without_ji
            + table.summary.predator_extinct
            + table.summary.critical
            + table.summary.both_extinct;
        assert_eq!(total, 9);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = SweepSpec::new(Coefficients::reference(), vec![], 1e-3);
        assert_eq!(sweep(&spec), Err(SweepError::EmptyGrid));
        let spec = SweepSpec::new(
            Coefficients::reference(),
            vec![SweepAxis::values("b2", vec![])],
            1e-3,
        );
        assert_eq!(sweep(&spec), Err(SweepError::EmptyGrid));
    }

    #[test]
    fn single_point_grid() {
        let spec = SweepSpec::new(
            Coefficients::reference(),
            vec![SweepAxis::values("b2", vec![1.0])],
            1e-3,
        );
        let table = sweep(&spec).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].regime, Regime::Coexistence);
    }

    #[test]
    fn cap_and_axis_checks() {
        let big = SweepAxis::linear("b2", 0.1, 1.0, 10_000).unwrap();
        let mut spec = SweepSpec::new(Coefficients::reference(), vec![big.clone(), big], 1e-3);
        spec.cell_cap = 1_000_000;
        assert_eq!(
            sweep(&spec),
            Err(SweepError::GridTooLarge {
                cells: 100_000_000,
                cap: 1_000_000
            })
        );
        let spec = SweepSpec::new(
            Coefficients::reference(),
            vec![SweepAxis::values("zeta", vec![1.0])],
            1e-3,
        );
        assert!(matches!(sweep(&spec), Err(SweepError::UnknownCoefficient(_))));
        let spec = SweepSpec::new(
            Coefficients::reference(),
            vec![SweepAxis::values("b2", vec![f64::NAN])],
            1e-3,
        );
        assert!(matches!(sweep(&spec), Err(SweepError::NonFiniteAxis { .. })));
    }

    #[test]
    fn rows_follow_grid_order() {
        let spec = SweepSpec::new(
            Coefficients::reference(),
            vec![
                SweepAxis::values("c2", vec![0.2, 2.0]),
                SweepAxis::values("b2", vec![0.5, 1.0, 2.0]),
            ],
            1e-3,
        );
        let table = sweep(&spec).unwrap();
        let points: Vec<_> = table.rows.iter().map(|r| r.point.clone()).collect();
        assert_eq!(points[0], vec![0.2, 0.5]);
        assert_eq!(points[2], vec![0.2, 2.0]);
        assert_eq!(points[3], vec![2.0, 0.5]);
        assert_eq!(table.summary.predator_extinct, 3);
    }
}
