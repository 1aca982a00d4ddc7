//! Sparse linear regression with compositional covariates.
//!
//! Compositional data (microbiome relative abundances, geochemical parts,
//! budget shares) carry only relative information: each sample lives on the
//! simplex, so ordinary regression on raw proportions is ill-posed. This
//! crate fits the log-contrast model
//!
//! ```text
//!     y = Z β + ε,    Z = log X,    Cᵀ β = 0,
//! ```
//!
//! where the columns of `C` encode zero-sum constraints over groups of
//! components (one constraint per taxonomic group yields estimates that are
//! coherent under taking subcompositions). The coefficient vector is
//! estimated by an ℓ1-penalised least-squares criterion solved with
//! coordinate descent on an augmented Lagrangian ([`cdmm`]), the penalty
//! level is chosen by an iterative scale/penalty fixed point ([`tuning`]),
//! and sparse estimates are corrected for shrinkage bias so that per
//! coordinate confidence intervals and p-values are available ([`debias`],
//! [`inference`]). Design-quality checks and a reproducible simulation
//! harness round out the toolkit ([`diagnostics`], [`sim`]).

pub mod cdmm;
pub mod debias;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod normal;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
