//! Dense linear programming for small instances.
//!
//! `solve_lp` is a two-phase primal simplex on a dense tableau with native
//! variable bounds. Dantzig pricing is used until a run of degenerate pivots
//! is observed, after which Bland's rule takes over for the rest of the solve.
//! `solve_mblp` wraps it in a depth-first branch-and-bound over binary
//! variables.
//!
//! The [`text`] module reads and writes a plain-text instance format so that
//! failing instances can be dumped and replayed.

mod branch;
mod problem;
mod simplex;
pub mod text;

pub use branch::{solve_mblp, MbLpOutcome, MbLpSolution, MAX_BINARIES};
pub use problem::{Constraint, LpProblem, MbLpProblem, Relation, Sense};
pub use simplex::{solve_lp, LpOutcome, LpSolution};

/// Absolute primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Relative optimality tolerance on reduced costs.
pub const OPT_TOL: f64 = 1e-9;
/// Default pivot budget used when callers have no better estimate.
pub const DEFAULT_PIVOT_LIMIT: usize = 50_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("pivot limit exceeded (best bound {best_bound})")]
    PivotLimitExceeded { best_bound: f64 },
    #[error("numerical failure: final point violates a row by {violation}")]
    Numerical { violation: f64 },
    #[error("malformed problem: {0}")]
    Malformed(String),
}
