//! Exact small-scale OT solver: transportation simplex on the dense
//! bipartite problem. Ground truth for tests and gap computation.
//!
//! Northwest-corner start, entering variable by most negative reduced cost
//! with lowest-index tie breaking, leaving variable by lowest index among the
//! blocking arcs. Bases are spanning trees over the `2M` bipartite nodes and
//! always carry exactly `2M - 1` arcs (degenerate zero arcs included).

use crate::error::{Error, Result};
use crate::grid::{FlowPair, GridDims, Histogram2D};

/// Dense plan size cap: `M = m * n`.
pub const ORACLE_CAP: usize = 1024;

const PIVOT_GUARD: usize = 2_000_000;
const PRICE_TOL: f64 = 1e-11;

/// A dense transportation problem between two histograms on the same grid.
#[derive(Debug, Clone)]
pub struct DenseOTProblem {
    pub dims: GridDims,
    pub mu1: Histogram2D,
    pub mu2: Histogram2D,
}

impl DenseOTProblem {
    pub fn new(mu1: &Histogram2D, mu2: &Histogram2D) -> Result<Self> {
        if mu1.dims() != mu2.dims() {
            return Err(Error::DimensionMismatch(
                "oracle histograms must share dims".into(),
            ));
        }
        if mu1.dims().num_bins() > ORACLE_CAP {
            return Err(Error::SizeCapExceeded {
                m: mu1.dims().num_bins(),
                cap: ORACLE_CAP,
            });
        }
        Ok(Self {
            dims: mu1.dims(),
            mu1: mu1.clone(),
            mu2: mu2.clone(),
        })
    }

    /// Squared-Euclidean ground cost between source node `s` and sink `t`.
    #[inline]
    fn cost(&self, s: usize, t: usize) -> f64 {
        let m = self.dims.m;
        let (si, sj) = (s % m, s / m);
        let (ti, tj) = (t % m, t / m);
        let di = si as f64 - ti as f64;
        let dj = sj as f64 - tj as f64;
        di * di + dj * dj
    }
}

/// An optimal plan as `(source node, sink node, mass)` triplets, zero-mass
/// basic arcs omitted.
pub type PlanTriplets = Vec<(usize, usize, f64)>;

struct Basis {
    /// Basic arcs (source, sink, value); positions are stable, removed arcs
    /// are swapped out.
    arcs: Vec<(usize, usize, f64)>,
    /// Adjacency: node -> arc indices. Sources are 0..M, sinks M..2M.
    adj: Vec<Vec<usize>>,
    m_bins: usize,
}

impl Basis {
    fn northwest_corner(supply: &[f64], demand: &[f64]) -> Self {
        let m_bins = supply.len();
        let mut arcs = Vec::with_capacity(2 * m_bins - 1);
        let mut rem_s = supply.to_vec();
        let mut rem_d = demand.to_vec();
        let (mut s, mut t) = (0usize, 0usize);
        loop {
            let q = rem_s[s].min(rem_d[t]);
            arcs.push((s, t, q));
            rem_s[s] -= q;
            rem_d[t] -= q;
            if s == m_bins - 1 && t == m_bins - 1 {
                break;
            }
            // advance exactly one pointer per arc so the basis stays a tree
            if s < m_bins - 1 && (rem_s[s] < rem_d[t] || t == m_bins - 1) {
                s += 1;
            } else {
                t += 1;
            }
        }
        let mut adj = vec![Vec::new(); 2 * m_bins];
        for (idx, &(s, t, _)) in arcs.iter().enumerate() {
            adj[s].push(idx);
            adj[m_bins + t].push(idx);
        }
        Self { arcs, adj, m_bins }
    }

    /// Duals (u, v) with u[0] = 0, via BFS over the basis tree.
    fn duals(&self, cost: &[f64], u: &mut [f64], v: &mut [f64]) {
        let m_bins = self.m_bins;
        let mut seen = vec![false; 2 * m_bins];
        let mut queue = std::collections::VecDeque::new();
        u[0] = 0.0;
        seen[0] = true;
        queue.push_back(0usize);
        while let Some(node) = queue.pop_front() {
            for &ai in &self.adj[node] {
                let (s, t, _) = self.arcs[ai];
                let (sn, tn) = (s, m_bins + t);
                let other = if node == sn { tn } else { sn };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if other >= m_bins {
                    v[other - m_bins] = cost[s * m_bins + t] - u[s];
                } else {
                    u[other] = cost[s * m_bins + t] - v[t];
                }
                queue.push_back(other);
            }
        }
    }

    /// Path from source `s` to sink `t` through the tree, as arc indices with
    /// orientation signs (+1 if traversed source->sink).
    fn cycle_path(&self, s: usize, t: usize) -> Vec<(usize, i8)> {
        let m_bins = self.m_bins;
        let start = s;
        let goal = m_bins + t;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; 2 * m_bins]; // (node, arc)
        let mut seen = vec![false; 2 * m_bins];
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &ai in &self.adj[node] {
                let (as_, at, _) = self.arcs[ai];
                let (sn, tn) = (as_, m_bins + at);
                let other = if node == sn { tn } else { sn };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, ai));
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = goal;
        while let Some((prev, ai)) = parent[node] {
            // arc traversed prev -> node; source->sink iff node is a sink
            let sign = if node >= m_bins { 1 } else { -1 };
            path.push((ai, sign));
            node = prev;
        }
        path.reverse();
        path
    }

    fn replace(&mut self, leaving: usize, entering: (usize, usize, f64)) {
        let (ols, olt, _) = self.arcs[leaving];
        self.adj[ols].retain(|&a| a != leaving);
        self.adj[self.m_bins + olt].retain(|&a| a != leaving);
        self.arcs[leaving] = entering;
        self.adj[entering.0].push(leaving);
        self.adj[self.m_bins + entering.1].push(leaving);
    }
}

/// Solves the transportation problem exactly. Returns the optimal value and
/// the optimal plan as sparse triplets.
pub fn exact_solve(problem: &DenseOTProblem) -> Result<(f64, PlanTriplets)> {
    let m_bins = problem.dims.num_bins();
    let supply = problem.mu1.mass();
    let demand = problem.mu2.mass();
    let mut basis = Basis::northwest_corner(supply, demand);
    let mut u = vec![0.0; m_bins];
    let mut v = vec![0.0; m_bins];
    // dense cost table: pricing scans it M^2 times per pivot
    let mut cost = vec![0.0; m_bins * m_bins];
    for s in 0..m_bins {
        for t in 0..m_bins {
            cost[s * m_bins + t] = problem.cost(s, t);
        }
    }

    let mut row_mins = vec![f64::INFINITY; m_bins];
    for _pivot in 0..PIVOT_GUARD {
        basis.duals(&cost, &mut u, &mut v);

        // entering arc: most negative reduced cost, lowest (s, t) on ties.
        // Value pass first (vectorizes), then locate the winner's index.
        let mut min_rc = f64::INFINITY;
        for s in 0..m_bins {
            let row = &cost[s * m_bins..(s + 1) * m_bins];
            let mut lanes = [f64::INFINITY; 8];
            let mut chunks_c = row.chunks_exact(8);
            let mut chunks_v = v.chunks_exact(8);
            for (cc, cv) in (&mut chunks_c).zip(&mut chunks_v) {
                for i in 0..8 {
                    lanes[i] = lanes[i].min(cc[i] - cv[i]);
                }
            }
            let mut row_min = lanes.iter().copied().fold(f64::INFINITY, f64::min);
            for (&c, &vt) in chunks_c.remainder().iter().zip(chunks_v.remainder()) {
                row_min = row_min.min(c - vt);
            }
            row_mins[s] = row_min - u[s];
            min_rc = min_rc.min(row_mins[s]);
        }
        let mut best: Option<(f64, usize, usize)> = None;
        if min_rc < -PRICE_TOL {
            'scan: for s in 0..m_bins {
                if row_mins[s] > min_rc + 1e-15 {
                    continue;
                }
                let us = u[s];
                let row = &cost[s * m_bins..(s + 1) * m_bins];
                for t in 0..m_bins {
                    let rc = row[t] - us - v[t];
                    if rc <= min_rc + 1e-15 {
                        best = Some((rc, s, t));
                        break 'scan;
                    }
                }
            }
        }
        let Some((_, es, et)) = best else {
            // optimal
            let plan: PlanTriplets = basis
                .arcs
                .iter()
                .filter(|&&(_, _, val)| val > 0.0)
                .copied()
                .collect();
            let value = plan
                .iter()
                .map(|&(s, t, val)| val * cost[s * m_bins + t])
                .sum();
            return Ok((value, plan));
        };

        // pivot: entering arc closes a unique cycle; alternate signs along it
        let path = basis.cycle_path(es, et);
        // entering arc gets +theta; path arcs oriented with the cycle get -theta
        // if they oppose the entering direction. Walking sink->...->source,
        // forward (source->sink) arcs on the path are decreased.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &(ai, sign) in &path {
            if sign > 0 {
                let val = basis.arcs[ai].2;
                if val < theta - 1e-18 || (val <= theta && ai < leaving) {
                    theta = val;
                    leaving = ai;
                }
            }
        }
        if leaving == usize::MAX {
            return Err(Error::CyclingGuard(_pivot));
        }
        for &(ai, sign) in &path {
            if sign > 0 {
                basis.arcs[ai].2 -= theta;
            } else {
                basis.arcs[ai].2 += theta;
            }
        }
        basis.replace(leaving, (es, et, theta));
    }
    Err(Error::CyclingGuard(PIVOT_GUARD))
}

/// Converts an optimal dense plan into reduced-model flows by marginalizing:
/// `f1[i,k,j] = sum_l pi[(i,j),(k,l)]`, `f2[k,j,l] = sum_i pi[(i,j),(k,l)]`.
pub fn plan_to_flows(plan: &PlanTriplets, dims: GridDims) -> FlowPair {
    let m = dims.m;
    let mut flows = FlowPair::zeros(dims);
    for &(s, t, mass) in plan {
        let (i, j) = (s % m, s / m);
        let (k, l) = (t % m, t / m);
        flows.f1[dims.f1_index(i, k, j)] += mass;
        flows.f2[dims.f2_index(k, j, l)] += mass;
    }
    flows
}

/// Solves exactly and returns optimal reduced-model flows.
pub fn exact_reduced_flows(problem: &DenseOTProblem) -> Result<(f64, FlowPair)> {
    let (value, plan) = exact_solve(problem)?;
    Ok((value, plan_to_flows(&plan, problem.dims)))
}
