//! Shared-noise geometry: the support of the stationary law and the bracket
//! rank conditions behind its smoothness.

mod control;
mod lie;

pub use control::{
    c_star, g_h, invariant_control_set, sup_h, support_membership, CStar, ControlSetDescriptor,
    SupH, DEFAULT_C_STAR_TOL, DEFAULT_SCAN_STEP, DEFAULT_Z_HI, DEFAULT_Z_LO,
};
pub use lie::{
    lie_bracket, lie_rank, planar_rank, square_grid, verify_hormander, BracketFamily, Expr, Field,
    FieldExpr, LieRankReport, PlanarRank, PointRank, Variant, MAX_DEPTH, RANK_REL_TOL,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("state out of range (u = {u}, z = {z})")]
    Overflow { u: f64, z: f64 },
    #[error("0 < beta < alpha: the support is the whole plane and h has no finite supremum")]
    FullPlaneCase,
    #[error("could not bracket the supremum of h at z = {z}")]
    BracketFailure { z: f64 },
    #[error("sup_h is not positive at the scan start z = {z}")]
    ScanInconclusive { z: f64 },
    #[error("scan needs z_lo < z_hi, step > 0 and tol > 0")]
    BadScan,
    #[error("invariant control set needs lambda > 0 (got {0})")]
    LambdaNotPositive(f64),
    #[error("support membership needs a shared-noise trajectory")]
    NotShared,
    #[error("bracket depth {0} exceeds the maximum of 4")]
    DepthExceeded(usize),
}
