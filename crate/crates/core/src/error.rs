//! Error type shared across the crate.

use thiserror::Error;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input (dimensions, ranges, flags).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A sample row contains no positive mass, so it cannot be closed to
    /// the simplex.
    #[error("row {row} has no positive entries; cannot renormalise")]
    AllZeroRow { row: usize },

    /// Proportions must be strictly positive before taking logs.
    #[error("nonpositive proportion at row {row}, column {col}; apply zero replacement first")]
    NonpositiveEntry { row: usize, col: usize },

    /// Constraint groups need at least two members to express a contrast.
    #[error("constraint group {index} has {size} member(s); groups need at least 2")]
    GroupTooSmall { index: usize, size: usize },

    /// A design column with zero norm and no constraint membership has an
    /// undefined coordinate update.
    #[error("design column {col} is degenerate (zero norm and unconstrained)")]
    DegenerateColumn { col: usize },

    /// NaN or infinity found where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An iterative routine exhausted its iteration budget.
    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// Rows of the bias-correction program stayed infeasible after the
    /// feasibility radius was enlarged up to the escalation cap.
    #[error("bias-correction program infeasible for rows {rows:?} after radius escalation")]
    Infeasible { rows: Vec<usize> },

    /// A combinatorial search would exceed the hard enumeration budget.
    #[error("enumeration budget exceeded: {required} subsets required, cap is {cap}")]
    BudgetExceeded { required: u128, cap: u128 },

    /// A linear system that should be well-posed was numerically singular.
    #[error("singular linear system: {0}")]
    Singular(String),

    /// Tabular input could not be parsed; `line` is 1-based and includes
    /// the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
