//! Lie brackets of the log-coordinate drift `A` and the constant noise
//! direction `B = (alpha, beta)` of the shared-noise model.
//!
//! Every component of every bracket is a finite sum of monomials
//! `c e1^i e2^j / D^k` with `e1 = e^u`, `e2 = e^v`, `D = m1 + m2 e1 + m3 e2`.
//! That class is closed under `d/du`, `d/dv` and products, so brackets are
//! assembled exactly and only evaluated numerically at the end.

use super::GeometryError;
use crate::model::{ModelParams, LOG_OVERFLOW_GUARD};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

pub const MAX_DEPTH: usize = 4;
pub const RANK_REL_TOL: f64 = 1e-10;

/// Sum of `coef e1^i e2^j D^-k`, keyed by `(i, j, k)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expr(BTreeMap<(i32, i32, i32), f64>);

impl Expr {
    fn constant(c: f64) -> Self {
        Self::term(c, 0, 0, 0)
    }

    fn term(c: f64, i: i32, j: i32, k: i32) -> Self {
        let mut e = Self::default();
        e.add_term(c, (i, j, k));
        e
    }

    fn add_term(&mut self, c: f64, key: (i32, i32, i32)) {
        if c == 0.0 {
            return;
        }
        let slot = self.0.entry(key).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.0.remove(&key);
        }
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&k, &c) in &other.0 {
            out.add_term(c, k);
        }
        out
    }

    fn scale(&self, s: f64) -> Self {
        let mut out = Self::default();
        for (&k, &c) in &self.0 {
            out.add_term(s * c, k);
        }
        out
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (&(i1, j1, k1), &c1) in &self.0 {
            for (&(i2, j2, k2), &c2) in &other.0 {
                out.add_term(c1 * c2, (i1 + i2, j1 + j2, k1 + k2));
            }
        }
        out
    }

    /// `d/du` (`wrt_v = false`) or `d/dv` (`wrt_v = true`).
    fn diff(&self, wrt_v: bool, m2: f64, m3: f64) -> Self {
        let mut out = Self::default();
        for (&(i, j, k), &c) in &self.0 {
            let (power, dd) = if wrt_v { (j, m3) } else { (i, m2) };
            out.add_term(c * power as f64, (i, j, k));
            let shifted = if wrt_v { (i, j + 1, k + 1) } else { (i + 1, j, k + 1) };
            out.add_term(-c * k as f64 * dd, shifted);
        }
        out
    }

    fn eval(&self, u: f64, v: f64, ln_d: f64) -> f64 {
        self.0
            .iter()
            .map(|(&(i, j, k), &c)| c * (i as f64 * u + j as f64 * v - k as f64 * ln_d).exp())
            .sum()
    }

    pub fn terms(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }
}

/// Planar vector field with components in [`Expr`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field([Expr; 2]);

impl Field {
    /// Log-coordinate drift `A`.
    pub fn drift(p: &ModelParams) -> Self {
        let c = p.coef();
        let a1 = Expr::constant(p.prey_log_growth())
            .add(&Expr::term(-c.b1, 1, 0, 0))
            .add(&Expr::term(-c.c1, 0, 1, 1));
        let a2 = Expr::constant(p.predator_log_decay())
            .add(&Expr::term(-c.b2, 0, 1, 0))
            .add(&Expr::term(c.c2, 1, 0, 1));
        Field([a1, a2])
    }

    /// Shared noise direction `B = (alpha, beta)`.
    pub fn noise(p: &ModelParams) -> Self {
        let c = p.coef();
        Field([Expr::constant(c.alpha), Expr::constant(c.beta)])
    }

    pub fn is_zero(&self) -> bool {
        self.0[0].is_zero() && self.0[1].is_zero()
    }

    pub fn add(&self, other: &Self) -> Self {
        Field([self.0[0].add(&other.0[0]), self.0[1].add(&other.0[1])])
    }

    pub fn scale(&self, s: f64) -> Self {
        Field([self.0[0].scale(s), self.0[1].scale(s)])
    }

    /// `(DY) X`: derivative of `self` along `x`.
    fn directional(&self, x: &Field, m2: f64, m3: f64) -> Field {
        let comp = |e: &Expr| {
            e.diff(false, m2, m3)
                .mul(&x.0[0])
                .add(&e.diff(true, m2, m3).mul(&x.0[1]))
        };
        Field([comp(&self.0[0]), comp(&self.0[1])])
    }

    /// `[X, Y] = (DY) X - (DX) Y`.
    pub fn bracket(x: &Field, y: &Field, p: &ModelParams) -> Field {
        let (m2, m3) = (p.coef().m2, p.coef().m3);
        y.directional(x, m2, m3).add(&x.directional(y, m2, m3).scale(-1.0))
    }

    pub fn eval(&self, p: &ModelParams, u: f64, v: f64) -> Result<[f64; 2], GeometryError> {
        if !(u <= LOG_OVERFLOW_GUARD && v <= LOG_OVERFLOW_GUARD) || u.is_nan() || v.is_nan() {
            return Err(GeometryError::Overflow { u, z: v });
        }
        let c = p.coef();
        let ln_d = (c.m1 + c.m2 * u.exp() + c.m3 * v.exp()).ln();
        Ok([self.0[0].eval(u, v, ln_d), self.0[1].eval(u, v, ln_d)])
    }
}

/// Expression over the generators `A`, `B` and their brackets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum FieldExpr {
    A,
    B,
    Bracket(Box<FieldExpr>, Box<FieldExpr>),
}

impl FieldExpr {
    pub fn bracket(x: FieldExpr, y: FieldExpr) -> Self {
        FieldExpr::Bracket(Box::new(x), Box::new(y))
    }

    /// Bracket nesting depth.
    pub fn depth(&self) -> usize {
        match self {
            FieldExpr::A | FieldExpr::B => 0,
            FieldExpr::Bracket(x, y) => 1 + x.depth().max(y.depth()),
        }
    }

    pub fn to_field(&self, p: &ModelParams) -> Result<Field, GeometryError> {
        if self.depth() > MAX_DEPTH {
            return Err(GeometryError::DepthExceeded(self.depth()));
        }
        Ok(self.build(p))
    }

    fn build(&self, p: &ModelParams) -> Field {
        match self {
            FieldExpr::A => Field::drift(p),
            FieldExpr::B => Field::noise(p),
            FieldExpr::Bracket(x, y) => Field::bracket(&x.build(p), &y.build(p), p),
        }
    }
}

impl std::fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldExpr::A => write!(f, "A"),
            FieldExpr::B => write!(f, "B"),
            FieldExpr::Bracket(x, y) => write!(f, "[{x},{y}]"),
        }
    }
}

/// `[X, Y]` evaluated at `(u, v)`.
pub fn lie_bracket(
    p: &ModelParams,
    x: &FieldExpr,
    y: &FieldExpr,
    point: (f64, f64),
) -> Result<[f64; 2], GeometryError> {
    let e = FieldExpr::bracket(x.clone(), y.clone());
    e.to_field(p)?.eval(p, point.0, point.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Span of `A`, `B` and their brackets.
    Full,
    /// Span of `B` and the brackets, i.e. the ideal generated by `B`.
    Ideal,
}

/// Fields spanning the chosen algebra up to `depth`: the generators, then
/// the right-nested brackets `[G, Y]` with `G` in `{A, B}` and `Y` from the
/// previous level. Identically zero brackets are skipped.
#[derive(Debug, Clone)]
pub struct BracketFamily {
    pub exprs: Vec<FieldExpr>,
    pub fields: Vec<Field>,
}

impl BracketFamily {
    pub fn new(p: &ModelParams, depth: usize, variant: Variant) -> Result<Self, GeometryError> {
        if depth > MAX_DEPTH {
            return Err(GeometryError::DepthExceeded(depth));
        }
        let a = Field::drift(p);
        let b = Field::noise(p);
        let mut exprs = Vec::new();
        let mut fields = Vec::new();
        if variant == Variant::Full {
            exprs.push(FieldExpr::A);
            fields.push(a.clone());
        }
        exprs.push(FieldExpr::B);
        fields.push(b.clone());
        let mut level: Vec<(FieldExpr, Field)> =
            vec![(FieldExpr::A, a.clone()), (FieldExpr::B, b.clone())];
        for _ in 0..depth {
            let mut next = Vec::new();
            for (ge, gf) in [(FieldExpr::A, &a), (FieldExpr::B, &b)] {
                for (ye, yf) in &level {
                    let f = Field::bracket(gf, yf, p);
                    if !f.is_zero() {
                        next.push((FieldExpr::bracket(ge.clone(), ye.clone()), f));
                    }
                }
            }
            for (e, f) in &next {
                exprs.push(e.clone());
                fields.push(f.clone());
            }
            level = next;
        }
        Ok(Self { exprs, fields })
    }

    pub fn eval(&self, p: &ModelParams, u: f64, v: f64) -> Result<Vec<[f64; 2]>, GeometryError> {
        self.fields.iter().map(|f| f.eval(p, u, v)).collect()
    }
}

/// Rank of a set of planar vectors together with its singular values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarRank {
    pub rank: u8,
    pub singular_values: [f64; 2],
    /// Pair of vectors with the largest 2x2 minor (rank 2), or the largest
    /// vector twice (rank below 2).
    pub witnesses: [[f64; 2]; 2],
}

/// Rank via the singular values of the `n x 2` matrix of `vectors`:
/// `s1^2 + s2^2 = |M|_F^2` and `s1 s2 = sqrt(sum of squared 2x2 minors)`.
pub fn planar_rank(vectors: &[[f64; 2]]) -> PlanarRank {
    let frob2: f64 = vectors.iter().map(|w| w[0] * w[0] + w[1] * w[1]).sum();
    let mut minor2 = 0.0;
    let mut best_minor = (0.0, 0, 0);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let m = vectors[i][0] * vectors[j][1] - vectors[i][1] * vectors[j][0];
            minor2 += m * m;
            if m.abs() > best_minor.0 {
                best_minor = (m.abs(), i, j);
            }
        }
    }
    let prod = minor2.sqrt();
    let disc = (frob2 * frob2 - 4.0 * prod * prod).max(0.0).sqrt();
    let s1 = ((frob2 + disc) / 2.0).sqrt();
    let s2 = if s1 > 0.0 { prod / s1 } else { 0.0 };
    let longest = vectors
        .iter()
        .copied()
        .max_by(|a, b| (a[0].hypot(a[1])).total_cmp(&b[0].hypot(b[1])))
        .unwrap_or([0.0, 0.0]);
    let rank = if s1 == 0.0 {
        0
    } else if s2 > RANK_REL_TOL * s1 {
        2
    } else {
        1
    };
    let witnesses = if rank == 2 {
        [vectors[best_minor.1], vectors[best_minor.2]]
    } else {
        [longest, longest]
    };
    PlanarRank {
        rank,
        singular_values: [s1, s2],
        witnesses,
    }
}

pub fn lie_rank(
    p: &ModelParams,
    point: (f64, f64),
    depth: usize,
    variant: Variant,
) -> Result<PlanarRank, GeometryError> {
    let fam = BracketFamily::new(p, depth, variant)?;
    Ok(planar_rank(&fam.eval(p, point.0, point.1)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRank {
    pub u: f64,
    pub v: f64,
    pub rank: u8,
    pub singular_values: [f64; 2],
}

/// Rank at every grid point. A clean report is evidence at the sampled
/// points only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LieRankReport {
    pub depth: usize,
    pub variant: Variant,
    pub fields: Vec<String>,
    pub points: Vec<PointRank>,
    pub deficient: Vec<(f64, f64)>,
    pub scope: &'static str,
}

pub fn verify_hormander(
    p: &ModelParams,
    grid: &[(f64, f64)],
    depth: usize,
    variant: Variant,
) -> Result<LieRankReport, GeometryError> {
    let fam = BracketFamily::new(p, depth, variant)?;
    let points = grid
        .par_iter()
        .map(|&(u, v)| {
            let r = planar_rank(&fam.eval(p, u, v)?);
            Ok(PointRank {
                u,
                v,
                rank: r.rank,
                singular_values: r.singular_values,
            })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let deficient = points
        .iter()
        .filter(|r| r.rank < 2)
        .map(|r| (r.u, r.v))
        .collect();
    Ok(LieRankReport {
        depth,
        variant,
        fields: fam.exprs.iter().map(ToString::to_string).collect(),
        points,
        deficient,
        scope: "evidence at sampled points",
    })
}

/// `n x n` grid over `[lo, hi]^2`, `v` varying fastest.
pub fn square_grid(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let at = |i: usize| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (at(i), at(j))))
        .collect()
}
