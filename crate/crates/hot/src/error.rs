//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("histogram is not normalized: total mass {total} deviates from 1 by more than {tol}")]
    NotNormalized { total: f64, tol: f64 },

    #[error("negative mass {value} at bin ({i}, {j})")]
    NegativeMass { i: usize, j: usize, value: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("problem too large for dense oracle: M = {m} exceeds cap {cap}")]
    SizeCapExceeded { m: usize, cap: usize },

    #[error("solver diverged at iteration {iter}: iterate norm {norm:.3e}")]
    Diverged { iter: usize, norm: f64 },

    #[error("flow imbalance {imbalance:.3e} at middle node ({k}, {j}) exceeds tolerance {tol:.3e}")]
    FlowImbalance {
        k: usize,
        j: usize,
        imbalance: f64,
        tol: f64,
    },

    #[error("flow repair magnitude {magnitude:.3e} exceeds budget {budget:.3e}; flow too infeasible to sanitize")]
    RepairTooLarge { magnitude: f64, budget: f64 },

    #[error("transportation simplex exceeded {0} pivots; cycling guard tripped")]
    CyclingGuard(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("parse error: {0}")]
    Parse(String),
}
