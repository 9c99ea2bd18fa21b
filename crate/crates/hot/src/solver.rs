//! Halpern-accelerated primal-dual iteration (and its relaxed-ADMM
//! baseline) on the reduced LP, with relative-KKT stopping.
//!
//! One iteration computes the proposal `wbar = (ybar, zbar, xbar)`:
//!
//! ```text
//! A A^T ybar = b/sigma - A(x/sigma + z - c)     (structured solve)
//! xbar = x + sigma (A^T ybar + z - c)
//! zbar = max(0, c - A^T ybar - xbar/sigma)
//! ```
//!
//! and then either the Halpern step
//! `w_{k+1} = w0/(k+2) + (k+1)/(k+2) (2 wbar - w)`, which anchors every
//! iterate to the start point and yields an O(1/k) KKT-residual rate, or the
//! relaxed update `w_{k+1} = (1 - rho) w + rho wbar`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, ReducedLP};
use crate::normal::{self, NormalSolverCache};

/// Iterate update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Halpern-anchored step (the accelerated method).
    Halpern,
    /// Generalized ADMM relaxation `w_{k+1} = (1-rho) w + rho wbar`.
    Admm,
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverMode::Halpern => write!(f, "halpern"),
            SolverMode::Admm => write!(f, "admm"),
        }
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halpern" | "hot" => Ok(SolverMode::Halpern),
            "admm" => Ok(SolverMode::Admm),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Penalty parameter; `None` picks a scale-balancing default from the
    /// problem data. Any positive value preserves convergence.
    pub sigma: Option<f64>,
    /// Relative KKT tolerance.
    pub tol: f64,
    pub max_iters: usize,
    pub mode: SolverMode,
    /// Relaxation factor for [`SolverMode::Admm`], in (0, 2).
    pub rho: f64,
    /// Residual check period.
    pub check_every: usize,
    /// Record a per-check trace in the report.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            tol: 1e-6,
            max_iters: 200_000,
            mode: SolverMode::Halpern,
            rho: 1.7,
            check_every: 1,
            trace: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("sigma must be positive, got {s}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0, 2), got {}",
                self.rho
            )));
        }
        if self.max_iters == 0 || self.check_every == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and check_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The primal-dual triple `w = (y, z, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    /// Dual multiplier, length `M_3`.
    pub y: Vec<f64>,
    /// Dual slack, length `N`.
    pub z: Vec<f64>,
    /// Primal flow, length `N`.
    pub x: Vec<f64>,
}

impl PrimalDualState {
    pub fn zeros(lp: &ReducedLP) -> Self {
        Self {
            y: vec![0.0; lp.dims.num_rows()],
            z: vec![0.0; lp.dims.num_vars()],
            x: vec![0.0; lp.dims.num_vars()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIters,
}

/// One trace row, recorded every `check_every` iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    /// Relative KKT residual (the stopping quantity).
    pub kkt_res: f64,
    /// Unnormalized residual-mapping norm `||R(wbar)||`.
    pub res_norm: f64,
    pub objective: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// `<c, xbar>` at termination.
    pub distance: f64,
    pub iterations: usize,
    pub kkt_res: f64,
    /// Penalty actually used (resolved default when the config left it open).
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
    pub wall_time: f64,
    pub terminated_by: Termination,
}

/// Scale-balancing default penalty: `||b|| / (||c|| / sqrt(N))`, clamped to
/// `[1e-6, 1e3]`.
pub fn default_sigma(lp: &ReducedLP) -> f64 {
    let norm_b = norm2(&lp.b);
    let norm_c = norm2(&lp.c);
    let scale = (norm_c * (lp.dims.num_vars() as f64).powf(-0.5)).max(1e-12);
    (norm_b / scale).clamp(1e-6, 1e3)
}

#[inline]
fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Halpern anchor step: `w_{k+1} = w0/(k+2) + (k+1)/(k+2) (2 wbar - w)`,
/// applied componentwise to each segment of the triple.
pub fn halpern_update(k: usize, w0: &[f64], w: &[f64], wbar: &[f64], out: &mut [f64]) {
    let beta = 1.0 / (k as f64 + 2.0);
    let gamma = 1.0 - beta;
    for (((o, &a), &b), &c) in out.iter_mut().zip(w0).zip(w).zip(wbar) {
        *o = beta * a + gamma * (2.0 * c - b);
    }
}

/// Relaxed update: `w_{k+1} = (1 - rho) w + rho wbar`.
pub fn admm_update(rho: f64, w: &[f64], wbar: &[f64], out: &mut [f64]) {
    for ((o, &a), &b) in out.iter_mut().zip(w).zip(wbar) {
        *o = (1.0 - rho) * a + rho * b;
    }
}

fn halpern_update_inplace(k: usize, w0: &[f64], w: &mut [f64], wbar: &[f64]) {
    let beta = 1.0 / (k as f64 + 2.0);
    let gamma = 1.0 - beta;
    for ((v, &a), &c) in w.iter_mut().zip(w0).zip(wbar) {
        *v = beta * a + gamma * (2.0 * c - *v);
    }
}

fn admm_update_inplace(rho: f64, w: &mut [f64], wbar: &[f64]) {
    for (v, &b) in w.iter_mut().zip(wbar) {
        *v = (1.0 - rho) * *v + rho * b;
    }
}

/// Relative KKT residual of Eq.-(20) form:
/// `max(||A^T y + z - c|| / (1 + ||c||), ||min(x, z)|| / (1 + ||x|| + ||z||),
/// ||Ax - b|| / (1 + ||b||))`.
pub fn kkt_residual(w: &PrimalDualState, lp: &ReducedLP) -> Result<f64> {
    let aty = lp.apply_at(&w.y)?;
    let ax = lp.apply_a(&w.x)?;
    let dual: f64 = aty
        .iter()
        .zip(&w.z)
        .zip(&lp.c)
        .map(|((a, z), c)| {
            let r = a + z - c;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let comp: f64 = w
        .x
        .iter()
        .zip(&w.z)
        .map(|(&x, &z)| {
            let r = x.min(z);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let prim: f64 = ax
        .iter()
        .zip(&lp.b)
        .map(|(a, b)| {
            let r = a - b;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let rel = (dual / (1.0 + norm2(&lp.c)))
        .max(comp / (1.0 + norm2(&w.x) + norm2(&w.z)))
        .max(prim / (1.0 + norm2(&lp.b)));
    Ok(rel)
}

/// Quality metrics against a reference optimal primal: relative objective
/// gap and relative primal feasibility error.
pub fn metrics(x: &[f64], lp: &ReducedLP, x_ref: &[f64]) -> Result<(f64, f64)> {
    let obj = lp.objective(x);
    let obj_ref = lp.objective(x_ref);
    let gap = (obj - obj_ref).abs() / (obj_ref.abs() + 1.0);
    let ax = lp.apply_a(x)?;
    let neg: f64 = x
        .iter()
        .map(|&v| {
            let r = v.min(0.0);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let prim: f64 = ax
        .iter()
        .zip(&lp.b)
        .map(|(a, b)| {
            let r = a - b;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let feaserr = (neg / (1.0 + norm2(x))).max(prim / (1.0 + norm2(&lp.b)));
    Ok((gap, feaserr))
}

/// An in-progress solve, owning its state and scratch buffers. One session
/// per problem; distinct sessions are independent.
pub struct Session<'a> {
    lp: &'a ReducedLP,
    cache: NormalSolverCache,
    sigma: f64,
    mode: SolverMode,
    rho: f64,
    k: usize,
    w0: PrimalDualState,
    w: PrimalDualState,
    wbar: PrimalDualState,
    // scratch
    tmp_n: Vec<f64>,
    rhs: Vec<f64>,
    aty: Vec<f64>,
    norm_b: f64,
    norm_c: f64,
    guard: f64,
}

impl<'a> Session<'a> {
    pub fn new(lp: &'a ReducedLP, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let sigma = cfg.sigma.unwrap_or_else(|| default_sigma(lp));
        let n = lp.dims.num_vars();
        let rows = lp.dims.num_rows();
        // Start at the dual-feasible point y = 0, z = c, x = 0. Anchoring the
        // Halpern step at z = 0 instead would pin the residual to a
        // ~||c||/k floor, since the proposal map leaves the slack of every
        // inactive constraint untouched and the anchor keeps re-injecting a
        // c-sized offset there.
        let mut start = PrimalDualState::zeros(lp);
        start.z.copy_from_slice(&lp.c);
        Ok(Self {
            lp,
            cache: normal::build_cache(lp.dims),
            sigma,
            mode: cfg.mode,
            rho: cfg.rho,
            k: 0,
            w0: start.clone(),
            w: start.clone(),
            wbar: start,
            tmp_n: vec![0.0; n],
            rhs: vec![0.0; rows],
            aty: vec![0.0; n],
            norm_b: norm2(&lp.b),
            norm_c: norm2(&lp.c),
            guard: 1e12 * (1.0 + norm2(&lp.b) + norm2(&lp.c)),
        })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Current anchor-side iterate `w^k`.
    pub fn state(&self) -> &PrimalDualState {
        &self.w
    }

    /// Latest proposal `wbar^k` (valid after the first [`Session::step`]).
    pub fn proposal(&self) -> &PrimalDualState {
        &self.wbar
    }

    /// Computes `wbar^k` from `w^k` and advances to `w^{k+1}`.
    pub fn step(&mut self) -> Result<()> {
        let sigma = self.sigma;
        let lp = self.lp;

        // rhs = b/sigma - A(x/sigma + z - c)
        for (((t, &x), &z), &c) in self
            .tmp_n
            .iter_mut()
            .zip(&self.w.x)
            .zip(&self.w.z)
            .zip(&lp.c)
        {
            *t = x / sigma + z - c;
        }
        grid::apply_a_into(&self.tmp_n, lp.dims, &mut self.rhs)?;
        for (r, &b) in self.rhs.iter_mut().zip(&lp.b) {
            *r = b / sigma - *r;
        }
        normal::solve_aat_into(&self.rhs, &self.cache, &mut self.wbar.y)?;

        grid::apply_at_into(&self.wbar.y, lp.dims, &mut self.aty)?;
        for ((((xb, zb), &x), &z), (&a, &c)) in self
            .wbar
            .x
            .iter_mut()
            .zip(self.wbar.z.iter_mut())
            .zip(&self.w.x)
            .zip(&self.w.z)
            .zip(self.aty.iter().zip(&lp.c))
        {
            let xv = x + sigma * (a + z - c);
            *xb = xv;
            *zb = (c - a - xv / sigma).max(0.0);
        }

        // advance the anchor-side iterate; both rules act entrywise, so the
        // update runs in place
        match self.mode {
            SolverMode::Halpern => {
                let k = self.k;
                for (w0, w, wb) in [
                    (&self.w0.y, &mut self.w.y, &self.wbar.y),
                    (&self.w0.z, &mut self.w.z, &self.wbar.z),
                    (&self.w0.x, &mut self.w.x, &self.wbar.x),
                ] {
                    halpern_update_inplace(k, w0, w, wb);
                }
            }
            SolverMode::Admm => {
                let rho = self.rho;
                for (w, wb) in [
                    (&mut self.w.y, &self.wbar.y),
                    (&mut self.w.z, &self.wbar.z),
                    (&mut self.w.x, &self.wbar.x),
                ] {
                    admm_update_inplace(rho, w, wb);
                }
            }
        }
        self.k += 1;

        // amortized divergence guard
        if self.k % 64 == 0 {
            let sup = self
                .wbar
                .x
                .iter()
                .chain(&self.wbar.y)
                .chain(&self.wbar.z)
                .fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if !sup.is_finite() || sup > self.guard {
                return Err(Error::Diverged {
                    iter: self.k,
                    norm: sup,
                });
            }
        }
        Ok(())
    }

    /// Residuals of the latest proposal: `(relative KKT, ||R(wbar)||)`.
    /// Reuses the `A^T ybar` computed during the step.
    pub fn residuals(&mut self) -> Result<(f64, f64)> {
        let lp = self.lp;
        let dual: f64 = self
            .aty
            .iter()
            .zip(&self.wbar.z)
            .zip(&lp.c)
            .map(|((a, z), c)| {
                let r = a + z - c;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let comp: f64 = self
            .wbar
            .x
            .iter()
            .zip(&self.wbar.z)
            .map(|(&x, &z)| {
                let r = x.min(z);
                r * r
            })
            .sum::<f64>()
            .sqrt();
        grid::apply_a_into(&self.wbar.x, lp.dims, &mut self.rhs)?;
        let prim: f64 = self
            .rhs
            .iter()
            .zip(&lp.b)
            .map(|(a, b)| {
                let r = a - b;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let rel = (dual / (1.0 + self.norm_c))
            .max(comp / (1.0 + norm2(&self.wbar.x) + norm2(&self.wbar.z)))
            .max(prim / (1.0 + self.norm_b));
        let unnorm = (dual * dual + comp * comp + prim * prim).sqrt();
        Ok((rel, unnorm))
    }
}

/// Runs the configured iteration from `w0 = 0` until the relative KKT
/// residual of the proposal drops below `tol` or `max_iters` is reached.
/// Returns the report and the final proposal `wbar`.
pub fn solve(lp: &ReducedLP, cfg: &SolverConfig) -> Result<(SolveReport, PrimalDualState)> {
    let start = Instant::now();
    let mut session = Session::new(lp, cfg)?;
    let mut trace = cfg.trace.then(Vec::new);
    let mut kkt = f64::INFINITY;
    let mut terminated_by = Termination::MaxIters;
    let mut iters = 0;

    while iters < cfg.max_iters {
        session.step()?;
        iters = session.iteration();
        if iters % cfg.check_every == 0 || iters == cfg.max_iters {
            let (rel, unnorm) = session.residuals()?;
            kkt = rel;
            if let Some(t) = trace.as_mut() {
                t.push(TraceEntry {
                    iter: iters,
                    kkt_res: rel,
                    res_norm: unnorm,
                    objective: lp.objective(&session.wbar.x),
                    elapsed_s: start.elapsed().as_secs_f64(),
                });
            }
            if rel <= cfg.tol {
                terminated_by = Termination::Tolerance;
                break;
            }
        }
    }

    let report = SolveReport {
        distance: lp.objective(&session.wbar.x),
        iterations: iters,
        kkt_res: kkt,
        sigma: session.sigma,
        trace,
        wall_time: start.elapsed().as_secs_f64(),
        terminated_by,
    };
    Ok((report, session.wbar))
}
