//! Symplectic eigenvalues of symmetric positive-definite matrices by
//! trace-penalty minimization.
//!
//! For an SPD matrix `A` of size `2n x 2n` the crate computes the `p` smallest
//! symplectic eigenvalues `d_1 <= ... <= d_p` together with a symplectic
//! eigenbasis. The workhorse is an unconstrained minimization of
//!
//! ```text
//! f_beta(X) = 1/2 <X, A X> + beta/4 * || X^T J_n X - J_p ||_F^2
//! ```
//!
//! over `X` of size `2n x 2p`, driven by a Barzilai-Borwein gradient method
//! with a nonmonotone line search, restarts through a symplectic
//! Rayleigh-Ritz step and adaptive penalty updates. Only products `A X` are
//! needed, so dense, sparse and sparse-plus-low-rank operators are all
//! supported.

pub mod error;
pub mod factor;
pub mod metrics;
pub mod operators;
pub mod oracle;
pub mod penalty;
pub mod solver;
pub mod stepper;
pub mod testgen;

pub mod cli;

pub use error::{Error, Result};
pub use operators::{Basis, CsrMatrix, SpdOperator};
pub use solver::{solve, solve_basic, SolverParams, Status, SympEigResult};
