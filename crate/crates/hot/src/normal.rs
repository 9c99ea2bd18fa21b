//! Linear-time solver for the normal equations `A A^T y = R`.
//!
//! `A A^T` has the block form
//!
//! ```text
//! [ E1   E2  E3 ]      E1 = (m+n) I_M
//! [ E2^T E4  0  ]      E2 = blockdiag(1_m 1_m^T)      E4 = m I_M
//! [ E3^T 0   E5 ]      E3 = -1_n (x) [I_m ... I_m Ibar_m^T]   E5 = n I_{M-1}
//! ```
//!
//! Eliminating `y2` and `y3` leaves an `M x M` system whose matrix is a
//! block-diagonal part (invertible in closed form) minus a rank-structured
//! correction; two applications of the Sherman-Morrison-Woodbury identity
//! reduce the correction to a diagonal-plus-rank-one `m x m` operator. The
//! whole solve is `O(M_3)` flops and never materializes `A A^T`.

use crate::error::{Error, Result};
use crate::grid::{self, GridDims};

/// Size cap of the dense verification oracle (`M = m * n`).
pub const DENSE_ORACLE_CAP: usize = 128;

/// Debug-build self-check cap for [`build_cache`].
#[cfg(debug_assertions)]
const CACHE_PROBE_CAP: usize = 4096;

/// Precomputed quantities for the structured solve. Valid for one `dims`.
///
/// The correction operator `W_hat` applied to the column-sum of the
/// block-diagonal solve is diagonal-plus-rank-one: `W_hat v = -(d .* v)
/// - (<d, v> / w) d`, so it costs `O(m)` per solve.
#[derive(Debug, Clone)]
pub struct NormalSolverCache {
    dims: GridDims,
    /// Shared diagonal/rank-one vector: `[1/m, ..., 1/m, (1 - 1/n)/(m + 1)]`.
    d: Vec<f64>,
    /// SMW scalar `1/m - (1 - 1/n)/(m + 1)`; strictly positive for all dims.
    w: f64,
}

impl NormalSolverCache {
    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Applies the correction `W_hat` to an `m`-vector.
    #[inline]
    fn apply_w_hat(&self, v: &[f64], out: &mut [f64]) {
        let dv: f64 = self.d.iter().zip(v).map(|(d, v)| d * v).sum();
        let scale = dv / self.w;
        for ((o, &d), &v) in out.iter_mut().zip(&self.d).zip(v) {
            *o = -(d * v) - scale * d;
        }
    }

    /// Materializes the `m x m` correction matrix. Symmetric by construction
    /// (diagonal plus a rank-one outer product). Test/inspection use only.
    pub fn w_hat_dense(&self) -> Vec<Vec<f64>> {
        let m = self.dims.m;
        let mut w = vec![vec![0.0; m]; m];
        for r in 0..m {
            for c in 0..m {
                w[r][c] = -self.d[r] * self.d[c] / self.w;
            }
            w[r][r] -= self.d[r];
        }
        w
    }
}

/// Precomputes the SMW correction for `dims`. In debug builds the cache is
/// certified on a probe right-hand side before being returned.
pub fn build_cache(dims: GridDims) -> NormalSolverCache {
    let (m, n) = (dims.m as f64, dims.n as f64);
    let tail = (1.0 - 1.0 / n) / (m + 1.0);
    let mut d = vec![1.0 / m; dims.m];
    d[dims.m - 1] = tail;
    let w = 1.0 / m - tail;
    let cache = NormalSolverCache { dims, d, w };

    #[cfg(debug_assertions)]
    if dims.num_bins() <= CACHE_PROBE_CAP {
        validate_cache(&cache).expect("structured normal solver failed its construction probe");
    }

    cache
}

/// Probe check: round-trip `y* -> R = A A^T y* -> solve` matrix-free, plus a
/// dense-oracle comparison where the oracle is affordable.
#[cfg(debug_assertions)]
fn validate_cache(cache: &NormalSolverCache) -> Result<()> {
    let dims = cache.dims;
    let y_star: Vec<f64> = (0..dims.num_rows())
        .map(|i| 1.0 + (i % 7) as f64 * 0.25)
        .collect();
    let r = grid::apply_a(&grid::apply_at(&y_star, dims)?, dims)?;
    let y = solve_aat(&r, cache)?;
    let num: f64 = y
        .iter()
        .zip(&y_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = y_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    if num > 1e-8 * den {
        return Err(Error::NonFinite(format!(
            "cache probe residual {:.3e} for {} x {}",
            num / den,
            dims.m,
            dims.n
        )));
    }
    if dims.num_bins() <= DENSE_ORACLE_CAP {
        let y_dense = dense_solve_aat(&r, dims)?;
        let err: f64 = y
            .iter()
            .zip(&y_dense)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if err > 1e-8 * den {
            return Err(Error::NonFinite(format!(
                "cache probe disagrees with dense oracle by {:.3e}",
                err / den
            )));
        }
    }
    Ok(())
}

/// Solves `A A^T y = R` in `O(M_3)` flops using the precomputed cache.
pub fn solve_aat(r: &[f64], cache: &NormalSolverCache) -> Result<Vec<f64>> {
    let mut y = vec![0.0; cache.dims.num_rows()];
    solve_aat_into(r, cache, &mut y)?;
    Ok(y)
}

/// In-place variant of [`solve_aat`] for allocation-free iteration loops.
pub fn solve_aat_into(r: &[f64], cache: &NormalSolverCache, y: &mut [f64]) -> Result<()> {
    let dims = cache.dims;
    let (m, n) = (dims.m, dims.n);
    let big_m = dims.num_bins();
    if r.len() != dims.num_rows() || y.len() != dims.num_rows() {
        return Err(Error::DimensionMismatch(format!(
            "solve_aat: got R len {} and y len {}, expected {}",
            r.len(),
            y.len(),
            dims.num_rows()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_aat right-hand side".into()));
    }
    let mf = m as f64;
    let nf = n as f64;
    let (r1, rest) = r.split_at(big_m);
    let (r2, r3) = rest.split_at(big_m);

    // v[k] = (E3 R3 contribution, negated): sum over column blocks of R3,
    // the last block padded with a zero at row m-1.
    let mut v = vec![0.0; m];
    for l in 0..n {
        let base = l * m;
        let rows = if l == n - 1 { m - 1 } else { m };
        for k in 0..rows {
            v[k] += r3[base + k];
        }
    }
    // Block-diagonal solve: yhat_1^j = Ehat_1^{-1} Rhat_1^j with
    // Rhat_1^j = R1^j - (sum R2^j / m) 1 + (1/n) v. Stored into y1.
    {
        let y1 = &mut y[..big_m];
        for j in 0..n {
            let base = j * m;
            let sum2: f64 = r2[base..base + m].iter().sum();
            let mut col_sum = 0.0;
            for i in 0..m {
                let rhat = r1[base + i] - sum2 / mf + v[i] / nf;
                y1[base + i] = rhat;
                col_sum += rhat;
            }
            let bump = col_sum / nf;
            for i in 0..m {
                y1[base + i] = (y1[base + i] + bump) / (mf + nf);
            }
        }
    }

    // Rank-structured correction: yhat_1^a = (I + (1/n) 1 1^T) W_hat s with
    // s the column-sum of yhat_1; identical for every column block.
    let mut s = vec![0.0; m];
    for j in 0..n {
        let base = j * m;
        for i in 0..m {
            s[i] += y[base + i];
        }
    }
    let mut corr = vec![0.0; m];
    cache.apply_w_hat(&s, &mut corr);
    let corr_sum: f64 = corr.iter().sum();
    for c in corr.iter_mut() {
        *c += corr_sum / nf;
    }
    for j in 0..n {
        let base = j * m;
        for i in 0..m {
            y[base + i] -= corr[i];
        }
    }

    // Column sums of the corrected y1, reused by both back-substitutions.
    let mut t = vec![0.0; m];
    for (ti, (si, ci)) in t.iter_mut().zip(s.iter().zip(&corr)) {
        *ti = si - nf * ci;
    }

    // y2^j = (R2^j - (1^T y1^j) 1) / m.
    for j in 0..n {
        let base = j * m;
        let col: f64 = y[base..base + m].iter().sum();
        for i in 0..m {
            y[big_m + base + i] = (r2[base + i] - col) / mf;
        }
    }

    // y3^l = (R3^l + t) / n, last block truncated to m-1 rows.
    for l in 0..n {
        let base = l * m;
        let rows = if l == n - 1 { m - 1 } else { m };
        for k in 0..rows {
            y[2 * big_m + base + k] = (r3[base + k] + t[k]) / nf;
        }
    }
    Ok(())
}

/// Assembles `A A^T` densely (via the matrix-free operator) and solves by
/// LU with partial pivoting. Verification oracle, capped at
/// [`DENSE_ORACLE_CAP`] bins.
pub fn dense_solve_aat(r: &[f64], dims: GridDims) -> Result<Vec<f64>> {
    let aat = dense_aat(dims)?;
    if r.len() != dims.num_rows() {
        return Err(Error::DimensionMismatch(format!(
            "dense_solve_aat: R len {} vs {}",
            r.len(),
            dims.num_rows()
        )));
    }
    lu_solve(aat, r.to_vec())
}

/// Dense `A A^T`, assembled column by column. Oracle use only.
pub fn dense_aat(dims: GridDims) -> Result<Vec<Vec<f64>>> {
    if dims.num_bins() > DENSE_ORACLE_CAP {
        return Err(Error::SizeCapExceeded {
            m: dims.num_bins(),
            cap: DENSE_ORACLE_CAP,
        });
    }
    let rows = dims.num_rows();
    let mut aat = vec![vec![0.0; rows]; rows];
    let mut e = vec![0.0; rows];
    for c in 0..rows {
        e[c] = 1.0;
        let col = grid::apply_a(&grid::apply_at(&e, dims)?, dims)?;
        e[c] = 0.0;
        for (row, val) in aat.iter_mut().zip(col) {
            row[c] = val;
        }
    }
    Ok(aat)
}

/// Plain LU with partial pivoting; consumes the matrix.
fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col][col].abs();
        for row in col + 1..n {
            let v = a[row][col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best == 0.0 {
            return Err(Error::NonFinite("singular matrix in dense oracle".into()));
        }
        if piv != col {
            a.swap(piv, col);
            b.swap(piv, col);
        }
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            if factor == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            let pivot_row = &upper[col];
            let target = &mut lower[0];
            for k in col..n {
                target[k] -= factor * pivot_row[k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * b[k];
        }
        b[col] = s / a[col][col];
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        num / norm(b).max(1e-300)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let dims = GridDims::new(4, 3).unwrap();
        let cache = build_cache(dims);
        let y = solve_aat(&vec![0.0; dims.num_rows()], &cache).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_all_small_dims() {
        for m in 1..=8 {
            for n in 1..=8 {
                let dims = GridDims::new(m, n).unwrap();
                let cache = build_cache(dims);
                let y_star = vec![1.0; dims.num_rows()];
                let r =
                    grid::apply_a(&grid::apply_at(&y_star, dims).unwrap(), dims).unwrap();
                let y = solve_aat(&r, &cache).unwrap();
                assert!(
                    rel_err(&y, &y_star) < 1e-10,
                    "round trip failed at m={m} n={n}: {}",
                    rel_err(&y, &y_star)
                );
            }
        }
    }

    #[test]
    fn matches_dense_oracle_3x2() {
        let dims = GridDims::new(3, 2).unwrap();
        let cache = build_cache(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r: Vec<f64> = (0..dims.num_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = solve_aat(&r, &cache).unwrap();
        let dense = dense_solve_aat(&r, dims).unwrap();
        assert!(rel_err(&fast, &dense) < 1e-10);
    }

    #[test]
    fn degenerate_single_row_and_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n) in &[(1, 5), (5, 1), (1, 1)] {
            let dims = GridDims::new(m, n).unwrap();
            let cache = build_cache(dims);
            let r: Vec<f64> = (0..dims.num_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = solve_aat(&r, &cache).unwrap();
            let dense = dense_solve_aat(&r, dims).unwrap();
            assert!(
                rel_err(&fast, &dense) < 1e-10,
                "m={m} n={n}: {}",
                rel_err(&fast, &dense)
            );
        }
    }

    #[test]
    fn correction_matrix_is_symmetric() {
        let cache = build_cache(GridDims::new(2, 2).unwrap());
        let w = cache.w_hat_dense();
        for r in 0..2 {
            for c in 0..2 {
                assert!((w[r][c] - w[c][r]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn solve_is_linear() {
        let dims = GridDims::new(5, 4).unwrap();
        let cache = build_cache(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r1: Vec<f64> = (0..dims.num_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: Vec<f64> = (0..dims.num_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (1.7, -0.4);
        let combo: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| alpha * a + beta * b).collect();
        let y1 = solve_aat(&r1, &cache).unwrap();
        let y2 = solve_aat(&r2, &cache).unwrap();
        let yc = solve_aat(&combo, &cache).unwrap();
        let expect: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| alpha * a + beta * b).collect();
        assert!(rel_err(&yc, &expect) < 1e-10);
    }

    #[test]
    fn dense_aat_block_structure() {
        // E1 = (m+n) I, E4 = m I, E5 = n I on the diagonal blocks.
        let dims = GridDims::new(3, 4).unwrap();
        let (m, n) = (3.0, 4.0);
        let big_m = dims.num_bins();
        let aat = dense_aat(dims).unwrap();
        for r in 0..big_m {
            assert_eq!(aat[r][r], m + n);
        }
        for r in big_m..2 * big_m {
            assert_eq!(aat[r][r], m);
            for c in 2 * big_m..dims.num_rows() {
                assert_eq!(aat[r][c], 0.0, "E4-E5 off-diagonal must vanish");
            }
        }
        for r in 2 * big_m..dims.num_rows() {
            assert_eq!(aat[r][r], n);
        }
    }

    #[test]
    fn dense_oracle_first_column_symmetry() {
        let dims = GridDims::new(2, 2).unwrap();
        let rows = dims.num_rows();
        let mut e1 = vec![0.0; rows];
        e1[0] = 1.0;
        let col = dense_solve_aat(&e1, dims).unwrap();
        // (A A^T)^{-1} is symmetric: column 1 equals row 1.
        let aat = dense_aat(dims).unwrap();
        for r in 0..rows {
            for c in 0..rows {
                assert!((aat[r][c] - aat[c][r]).abs() < 1e-14);
            }
        }
        // and solving against that column reproduces e1
        let back: Vec<f64> = {
            let mut out = vec![0.0; rows];
            for (r, row) in aat.iter().enumerate() {
                out[r] = row.iter().zip(&col).map(|(a, y)| a * y).sum();
            }
            out
        };
        for (got, want) in back.iter().zip(&e1) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_oracle_size_cap() {
        let dims = GridDims::new(16, 16).unwrap();
        assert!(matches!(
            dense_solve_aat(&vec![0.0; dims.num_rows()], dims),
            Err(Error::SizeCapExceeded { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_rhs() {
        let dims = GridDims::new(2, 2).unwrap();
        let cache = build_cache(dims);
        let mut r = vec![0.0; dims.num_rows()];
        r[3] = f64::NAN;
        assert!(solve_aat(&r, &cache).is_err());
    }
}
