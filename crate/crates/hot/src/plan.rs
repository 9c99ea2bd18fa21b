//! Sparse transport-plan reconstruction from reduced-model flows.
//!
//! Per middle node `(k, j)` the in-flows `f1[., k, j]` and out-flows
//! `f2[k, j, .]` have equal totals; greedily matching them with
//! `pi = min(f1, f2)` and subtracting from both (in ascending `i`, then
//! ascending `l`) yields an optimal plan of the original problem. Running
//! the sweep over the two nonzero lists with a pair of pointers costs
//! `O(m + n)` per middle node instead of `O(m n)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{FlowPair, GridDims};

/// A transport plan as `(source node, target node, mass)` triplets in the
/// column-major node indexing; zero entries omitted.
#[derive(Debug, Clone)]
pub struct SparsePlan {
    pub dims: GridDims,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparsePlan {
    /// Row marginals (mass leaving each source node).
    pub fn row_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.num_bins()];
        for &(src, _, mass) in &self.entries {
            out[src] += mass;
        }
        out
    }

    /// Column marginals (mass arriving at each target node).
    pub fn col_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.num_bins()];
        for &(_, dst, mass) in &self.entries {
            out[dst] += mass;
        }
        out
    }
}

/// Summary of the repairs applied by [`sanitize_flows`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RepairReport {
    /// Total negative mass clamped to zero.
    pub clamped: f64,
    /// Largest per-middle-node imbalance repaired.
    pub max_imbalance: f64,
}

impl RepairReport {
    pub fn magnitude(&self) -> f64 {
        self.clamped.max(self.max_imbalance)
    }
}

/// Prepares approximate solver flows for plan recovery: clamps negatives to
/// zero and repairs per-middle-node imbalance by proportionally rescaling
/// the side with the smaller total. Fails if the repair it would need
/// exceeds `100 * tol`.
pub fn sanitize_flows(
    flows: &FlowPair,
    dims: GridDims,
    tol: f64,
) -> Result<(FlowPair, RepairReport)> {
    let (m, n) = (dims.m, dims.n);
    let mut out = flows.clone();
    let mut report = RepairReport::default();
    for v in out.f1.iter_mut().chain(out.f2.iter_mut()) {
        if *v < 0.0 {
            report.clamped += -*v;
            *v = 0.0;
        }
    }
    for j in 0..n {
        for k in 0..m {
            let base1 = (j * m + k) * m;
            let in_total: f64 = out.f1[base1..base1 + m].iter().sum();
            let out_total: f64 = (0..n).map(|l| out.f2[dims.f2_index(k, j, l)]).sum();
            let delta = (in_total - out_total).abs();
            if delta == 0.0 {
                continue;
            }
            report.max_imbalance = report.max_imbalance.max(delta);
            let (small, large) = if in_total < out_total {
                (in_total, out_total)
            } else {
                (out_total, in_total)
            };
            if small > 0.0 {
                let scale = large / small;
                if in_total < out_total {
                    for v in &mut out.f1[base1..base1 + m] {
                        *v *= scale;
                    }
                } else {
                    for l in 0..n {
                        out.f2[dims.f2_index(k, j, l)] *= scale;
                    }
                }
            } else {
                // nothing to rescale on the empty side; zero the other one
                if in_total < out_total {
                    for l in 0..n {
                        out.f2[dims.f2_index(k, j, l)] = 0.0;
                    }
                } else {
                    for v in &mut out.f1[base1..base1 + m] {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    let budget = 100.0 * tol;
    if report.magnitude() > budget {
        return Err(Error::RepairTooLarge {
            magnitude: report.magnitude(),
            budget,
        });
    }
    Ok((out, report))
}

/// Reconstructs a sparse plan from nonnegative, per-middle-node balanced
/// flows. `tol_balance` bounds the tolerated residual imbalance.
pub fn recover_plan(flows: &FlowPair, dims: GridDims, tol_balance: f64) -> Result<SparsePlan> {
    let (m, n) = (dims.m, dims.n);
    let mut entries = Vec::new();
    let mut in_list: Vec<(usize, f64)> = Vec::with_capacity(m);
    let mut out_list: Vec<(usize, f64)> = Vec::with_capacity(n);
    for j in 0..n {
        for k in 0..m {
            in_list.clear();
            out_list.clear();
            let base1 = (j * m + k) * m;
            for i in 0..m {
                let v = flows.f1[base1 + i];
                if v > 0.0 {
                    in_list.push((i, v));
                }
            }
            for l in 0..n {
                let v = flows.f2[dims.f2_index(k, j, l)];
                if v > 0.0 {
                    out_list.push((l, v));
                }
            }
            let in_total: f64 = in_list.iter().map(|&(_, v)| v).sum();
            let out_total: f64 = out_list.iter().map(|&(_, v)| v).sum();
            if (in_total - out_total).abs() > tol_balance {
                return Err(Error::FlowImbalance {
                    k,
                    j,
                    imbalance: (in_total - out_total).abs(),
                    tol: tol_balance,
                });
            }
            // two-pointer min-matching sweep, ascending (i, l)
            let (mut a, mut b) = (0usize, 0usize);
            let mut rem_in = in_list.first().map_or(0.0, |&(_, v)| v);
            let mut rem_out = out_list.first().map_or(0.0, |&(_, v)| v);
            while a < in_list.len() && b < out_list.len() {
                let q = rem_in.min(rem_out);
                if q > 0.0 {
                    let src = dims.node(in_list[a].0, j);
                    let dst = dims.node(k, out_list[b].0);
                    entries.push((src, dst, q));
                }
                rem_in -= q;
                rem_out -= q;
                if rem_in <= 0.0 {
                    a += 1;
                    if a < in_list.len() {
                        rem_in = in_list[a].1;
                    }
                }
                if rem_out <= 0.0 {
                    b += 1;
                    if b < out_list.len() {
                        rem_out = out_list[b].1;
                    }
                }
            }
        }
    }
    Ok(SparsePlan { dims, entries })
}

/// Plan cost under the squared-Euclidean grid ground cost.
pub fn plan_cost(plan: &SparsePlan) -> f64 {
    let m = plan.dims.m;
    plan.entries
        .iter()
        .map(|&(src, dst, mass)| {
            let (i, j) = (src % m, src / m);
            let (k, l) = (dst % m, dst / m);
            let di = i as f64 - k as f64;
            let dj = j as f64 - l as f64;
            mass * (di * di + dj * dj)
        })
        .sum()
}

/// Writes a plan as CSV rows `src_i,src_j,dst_k,dst_l,mass` (0-based).
pub fn write_plan_csv<W: Write>(plan: &SparsePlan, mut out: W) -> Result<()> {
    let m = plan.dims.m;
    writeln!(out, "src_i,src_j,dst_k,dst_l,mass")?;
    for &(src, dst, mass) in &plan.entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            src % m,
            src / m,
            dst % m,
            dst / m,
            mass
        )?;
    }
    Ok(())
}

/// Binary triplet export, little-endian, `3 x u32 + f64` per entry:
/// `src_node, dst_node, reserved (always 0), mass`.
pub fn write_plan_binary<W: Write>(plan: &SparsePlan, mut out: W) -> Result<()> {
    for &(src, dst, mass) in &plan.entries {
        out.write_all(&(src as u32).to_le_bytes())?;
        out.write_all(&(dst as u32).to_le_bytes())?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&mass.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_cost, GridDims, Histogram2D};
    use crate::oracle::{exact_reduced_flows, DenseOTProblem};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_histogram(dims: GridDims, seed: u64) -> Histogram2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mass: Vec<f64> = (0..dims.num_bins()).map(|_| rng.gen_range(0.0..1.0)).collect();
        Histogram2D::from_unnormalized(dims, mass).unwrap()
    }

    fn identity_flows(mu: &Histogram2D) -> FlowPair {
        let dims = mu.dims();
        let mut fp = FlowPair::zeros(dims);
        for j in 0..dims.n {
            for i in 0..dims.m {
                fp.f1[dims.f1_index(i, i, j)] = mu.at(i, j);
                fp.f2[dims.f2_index(i, j, j)] = mu.at(i, j);
            }
        }
        fp
    }

    #[test]
    fn identity_flows_give_diagonal_plan() {
        let dims = GridDims::new(3, 2).unwrap();
        let mu = random_histogram(dims, 1);
        let plan = recover_plan(&identity_flows(&mu), dims, 1e-12).unwrap();
        for &(src, dst, _) in &plan.entries {
            assert_eq!(src, dst);
        }
        assert!(plan_cost(&plan).abs() < 1e-15);
    }

    #[test]
    fn single_unit_flow_2x1() {
        let dims = GridDims::new(2, 1).unwrap();
        let mut fp = FlowPair::zeros(dims);
        fp.f1[dims.f1_index(0, 1, 0)] = 1.0; // row 0 -> row 1 in column 0
        fp.f2[dims.f2_index(1, 0, 0)] = 1.0;
        let plan = recover_plan(&fp, dims, 1e-12).unwrap();
        assert_eq!(plan.entries.len(), 1);
        let (src, dst, mass) = plan.entries[0];
        assert_eq!(src, dims.node(0, 0));
        assert_eq!(dst, dims.node(1, 0));
        assert_eq!(mass, 1.0);
    }

    #[test]
    fn oracle_flows_recover_optimal_plan() {
        let dims = GridDims::new(4, 4).unwrap();
        let c = build_cost(dims);
        for seed in 0..10 {
            let mu1 = random_histogram(dims, 300 + seed);
            let mu2 = random_histogram(dims, 400 + seed);
            let p = DenseOTProblem::new(&mu1, &mu2).unwrap();
            let (value, flows) = exact_reduced_flows(&p).unwrap();
            let plan = recover_plan(&flows, dims, 1e-10).unwrap();

            // marginal identities against the flows
            let mut f1_marg = vec![0.0; dims.len_f1()];
            let mut f2_marg = vec![0.0; dims.len_f2()];
            let m = dims.m;
            for &(src, dst, mass) in &plan.entries {
                let (i, j) = (src % m, src / m);
                let (k, l) = (dst % m, dst / m);
                f1_marg[dims.f1_index(i, k, j)] += mass;
                f2_marg[dims.f2_index(k, j, l)] += mass;
            }
            for (got, want) in f1_marg.iter().zip(&flows.f1) {
                assert!((got - want).abs() < 1e-12);
            }
            for (got, want) in f2_marg.iter().zip(&flows.f2) {
                assert!((got - want).abs() < 1e-12);
            }

            // cost identity
            let x = flows.to_concat();
            let reduced: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
            let pc = plan_cost(&plan);
            assert!(
                (pc - reduced).abs() <= 1e-12 * (1.0 + reduced),
                "seed {seed}: plan {pc} vs reduced {reduced}"
            );
            assert!((pc - value).abs() <= 1e-10 * (1.0 + value));
        }
    }

    #[test]
    fn sparsity_bound_per_middle_node() {
        let dims = GridDims::new(5, 5).unwrap();
        let mu1 = random_histogram(dims, 21);
        let mu2 = random_histogram(dims, 22);
        let p = DenseOTProblem::new(&mu1, &mu2).unwrap();
        let (_, flows) = exact_reduced_flows(&p).unwrap();
        let plan = recover_plan(&flows, dims, 1e-10).unwrap();
        // per middle node, entries <= nnz(f1 col) + nnz(f2 row) - 1
        for j in 0..dims.n {
            for k in 0..dims.m {
                let nnz1 = (0..dims.m)
                    .filter(|&i| flows.f1[dims.f1_index(i, k, j)] > 0.0)
                    .count();
                let nnz2 = (0..dims.n)
                    .filter(|&l| flows.f2[dims.f2_index(k, j, l)] > 0.0)
                    .count();
                // middle node of entry (i,j)->(k,l) is (k, j)
                let count = plan
                    .entries
                    .iter()
                    .filter(|&&(src, dst, _)| src / dims.m == j && dst % dims.m == k)
                    .count();
                if nnz1 > 0 && nnz2 > 0 {
                    assert!(count <= nnz1 + nnz2 - 1, "middle node ({k},{j})");
                } else {
                    assert_eq!(count, 0);
                }
            }
        }
    }

    #[test]
    fn determinism() {
        let dims = GridDims::new(4, 3).unwrap();
        let mu1 = random_histogram(dims, 31);
        let mu2 = random_histogram(dims, 32);
        let p = DenseOTProblem::new(&mu1, &mu2).unwrap();
        let (_, flows) = exact_reduced_flows(&p).unwrap();
        let p1 = recover_plan(&flows, dims, 1e-10).unwrap();
        let p2 = recover_plan(&flows, dims, 1e-10).unwrap();
        assert_eq!(p1.entries, p2.entries);
    }

    #[test]
    fn sanitize_leaves_feasible_flows_unchanged() {
        let dims = GridDims::new(3, 3).unwrap();
        let mu = random_histogram(dims, 41);
        let flows = identity_flows(&mu);
        let (clean, report) = sanitize_flows(&flows, dims, 1e-6).unwrap();
        assert_eq!(clean.f1, flows.f1);
        assert_eq!(clean.f2, flows.f2);
        assert_eq!(report.magnitude(), 0.0);
    }

    #[test]
    fn sanitize_clamps_small_negative() {
        let dims = GridDims::new(2, 1).unwrap();
        let mut flows = identity_flows(&Histogram2D::uniform(dims));
        flows.f1[dims.f1_index(1, 0, 0)] = -1e-9;
        let (clean, report) = sanitize_flows(&flows, dims, 1e-6).unwrap();
        assert!(clean.f1.iter().all(|&v| v >= 0.0));
        assert!(report.clamped <= 1.1e-9);
    }

    #[test]
    fn sanitize_rejects_gross_infeasibility() {
        let dims = GridDims::new(2, 1).unwrap();
        let mut flows = FlowPair::zeros(dims);
        flows.f1[dims.f1_index(0, 0, 0)] = 1.0; // in-flow with no out-flow
        assert!(matches!(
            sanitize_flows(&flows, dims, 1e-6),
            Err(Error::RepairTooLarge { .. })
        ));
    }

    #[test]
    fn imbalanced_flows_rejected_by_recover() {
        let dims = GridDims::new(2, 1).unwrap();
        let mut flows = FlowPair::zeros(dims);
        flows.f1[dims.f1_index(0, 0, 0)] = 0.5;
        let err = recover_plan(&flows, dims, 1e-9).unwrap_err();
        assert!(matches!(err, Error::FlowImbalance { k: 0, j: 0, .. }));
    }

    #[test]
    fn csv_export_round_trip_shape() {
        let dims = GridDims::new(2, 2).unwrap();
        let plan = SparsePlan {
            dims,
            entries: vec![(0, 3, 0.5), (1, 2, 0.5)],
        };
        let mut buf = Vec::new();
        write_plan_csv(&plan, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "src_i,src_j,dst_k,dst_l,mass");
        assert_eq!(lines[1], "0,0,1,1,0.5");
    }

    #[test]
    fn binary_export_record_size() {
        let dims = GridDims::new(2, 2).unwrap();
        let plan = SparsePlan {
            dims,
            entries: vec![(0, 1, 0.25), (2, 3, 0.75)],
        };
        let mut buf = Vec::new();
        write_plan_binary(&plan, &mut buf).unwrap();
        assert_eq!(buf.len(), 2 * (3 * 4 + 8));
        assert_eq!(u32::from_le_bytes(buf[0..4].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[12..20].try_into().unwrap()), 0.25);
    }
}
