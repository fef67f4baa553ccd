//! Gridded semidefinite programs over polynomial matrix variables.
//!
//! Parameter-dependent matrix inequalities are imposed pointwise on a grid,
//! integral constraints become exact linear equalities on the coefficients,
//! and the result is lowered to standard conic form for an interior-point
//! solver.

mod affine;
mod program;
mod solve;

pub use affine::{AffExpr, BlockMatrix};
pub use program::{
    grid, Axis, Degrees, Grid, LinearEquality, LmiProgram, MatVar, PsdConstraint, ScalarVar, Sign,
    DEFAULT_PD_MARGIN, DEFAULT_STRICT_MARGIN,
};
pub use solve::{
    lower, lower_and_solve, smat, svec, Cone, ConicProblem, SolveReport, SolveStatus,
    SolverSettings, VarValue, TOL_ENV,
};
