//! # hot
//!
//! Kantorovich-Wasserstein (KW) distances between 2D histograms with squared
//! Euclidean ground cost, computed by solving the reduced flow LP with a
//! Halpern-accelerated primal-dual method.
//!
//! The reduced model routes mass vertically then horizontally through middle
//! nodes, shrinking the variable count from `M^2` to `m^2 n + m n^2` for an
//! `m x n` grid. The per-iteration bottleneck, a normal-equation solve
//! `A A^T y = R`, is handled in `O(M_3)` flops by structured block
//! elimination ([`normal`]), so the whole iteration is linear in the number
//! of flow variables.
//!
//! Main entry points:
//!
//! - [`grid::ReducedLP`] — builds the LP from two [`grid::Histogram2D`]s.
//! - [`solver::solve`] — runs the Halpern (or plain relaxed ADMM) iteration
//!   to a relative KKT tolerance.
//! - [`plan::recover_plan`] — reconstructs a sparse transport plan from the
//!   reduced-model flows.
//! - [`oracle`] — an exact transportation-simplex solver for desk-scale
//!   ground truth.
//! - [`color`] — end-to-end color transfer in CIE-Lab space.
//!
//! The `hot` binary exposes `distance`, `plan`, `transfer`, and `bench`
//! subcommands over the same library surface.

pub mod bench;
pub mod color;
pub mod error;
pub mod grid;
pub mod io;
pub mod normal;
pub mod oracle;
pub mod plan;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{FlowPair, GridDims, Histogram2D, ReducedLP};
pub use plan::SparsePlan;
pub use solver::{SolveReport, SolverConfig, SolverMode};
