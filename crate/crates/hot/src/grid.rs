//! Histograms, index layouts, and the matrix-free constraint operator of the
//! reduced flow LP.
//!
//! Layout conventions (0-based internally, matching the 1-based Kronecker
//! definitions of the constraint blocks):
//!
//! - grid node `(i, j)` (row `i`, column `j`) maps to index `j*m + i`
//!   (column-major);
//! - vertical flow `f1[i, k, j]` (mass moving from row `i` to row `k` inside
//!   column `j`) maps to `(j*m + k)*m + i`;
//! - horizontal flow `f2[k, j, l]` (mass moving from column `j` to column `l`
//!   inside row `k`) maps to `(l*n + j)*m + k`.
//!
//! With these orders the three constraint blocks are exactly
//! `A1 = I_M (x) 1_m^T`, `A2 = -1_n^T (x) I_M`, `A3 = I_n (x) (1_m^T (x) I_m)`
//! and `A4 = diag(1_n^T (x) I_m, ..., 1_n^T (x) Ibar_m)`, where the row for
//! node `(m, n)` of the third block is dropped so the assembled operator has
//! full row rank.

use crate::error::{Error, Result};

/// Mass-balance tolerance for accepting (and then re-normalizing) inputs.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Grid dimensions and the derived problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub m: usize,
    pub n: usize,
}

impl GridDims {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "grid dims must be positive, got {m} x {n}"
            )));
        }
        Ok(Self { m, n })
    }

    /// Number of bins `M = m * n`.
    #[inline]
    pub fn num_bins(&self) -> usize {
        self.m * self.n
    }

    /// Number of constraint rows `M_3 = 3M - 1`.
    #[inline]
    pub fn num_rows(&self) -> usize {
        3 * self.num_bins() - 1
    }

    /// Number of flow variables `N = m^2 n + m n^2`.
    #[inline]
    pub fn num_vars(&self) -> usize {
        self.m * self.m * self.n + self.m * self.n * self.n
    }

    /// Length of the vertical-flow segment `f1`.
    #[inline]
    pub fn len_f1(&self) -> usize {
        self.m * self.m * self.n
    }

    /// Length of the horizontal-flow segment `f2`.
    #[inline]
    pub fn len_f2(&self) -> usize {
        self.m * self.n * self.n
    }

    /// Column-major node index of bin `(i, j)`, 0-based.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.m + i
    }

    /// Index of `f1[i, k, j]`: flow from row `i` to row `k` in column `j`.
    #[inline]
    pub fn f1_index(&self, i: usize, k: usize, j: usize) -> usize {
        (j * self.m + k) * self.m + i
    }

    /// Index of `f2[k, j, l]`: flow from column `j` to column `l` in row `k`.
    #[inline]
    pub fn f2_index(&self, k: usize, j: usize, l: usize) -> usize {
        (l * self.n + j) * self.m + k
    }
}

/// A nonnegative mass grid summing to one, stored column-major.
#[derive(Debug, Clone)]
pub struct Histogram2D {
    dims: GridDims,
    mass: Vec<f64>,
}

impl Histogram2D {
    /// Builds a histogram from column-major mass values. The total mass must
    /// be within [`NORMALIZATION_TOL`] of 1; it is then re-scaled exactly.
    pub fn new(dims: GridDims, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != dims.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "histogram has {} entries, expected {}",
                mass.len(),
                dims.num_bins()
            )));
        }
        for (idx, &v) in mass.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("histogram entry {idx}")));
            }
            if v < 0.0 {
                return Err(Error::NegativeMass {
                    i: idx % dims.m,
                    j: idx / dims.m,
                    value: v,
                });
            }
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized {
                total,
                tol: NORMALIZATION_TOL,
            });
        }
        let mut mass = mass;
        let scale = 1.0 / total;
        for v in &mut mass {
            *v *= scale;
        }
        Ok(Self { dims, mass })
    }

    /// Builds a histogram from arbitrary nonnegative mass by dividing through
    /// by the total. Used by the image/CSV loaders.
    pub fn from_unnormalized(dims: GridDims, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != dims.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "histogram has {} entries, expected {}",
                mass.len(),
                dims.num_bins()
            )));
        }
        let total: f64 = mass.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::NotNormalized {
                total,
                tol: NORMALIZATION_TOL,
            });
        }
        let scaled: Vec<f64> = mass.iter().map(|&v| v / total).collect();
        Self::new(dims, scaled)
    }

    /// Builds a uniform histogram.
    pub fn uniform(dims: GridDims) -> Self {
        let w = 1.0 / dims.num_bins() as f64;
        Self {
            dims,
            mass: vec![w; dims.num_bins()],
        }
    }

    /// Unit mass at bin `(i, j)`, 0-based.
    pub fn dirac(dims: GridDims, i: usize, j: usize) -> Result<Self> {
        if i >= dims.m || j >= dims.n {
            return Err(Error::DimensionMismatch(format!(
                "dirac location ({i}, {j}) outside {} x {} grid",
                dims.m, dims.n
            )));
        }
        let mut mass = vec![0.0; dims.num_bins()];
        mass[dims.node(i, j)] = 1.0;
        Ok(Self { dims, mass })
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Column-major mass values.
    #[inline]
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.mass[self.dims.node(i, j)]
    }
}

/// Reduced-model flows `(f1, f2)` in the layouts of [`GridDims::f1_index`]
/// and [`GridDims::f2_index`].
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub dims: GridDims,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl FlowPair {
    pub fn zeros(dims: GridDims) -> Self {
        Self {
            dims,
            f1: vec![0.0; dims.len_f1()],
            f2: vec![0.0; dims.len_f2()],
        }
    }

    /// Splits a concatenated primal vector `x = [f1; f2]`.
    pub fn from_concat(dims: GridDims, x: &[f64]) -> Result<Self> {
        if x.len() != dims.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "flow vector has {} entries, expected {}",
                x.len(),
                dims.num_vars()
            )));
        }
        let (f1, f2) = x.split_at(dims.len_f1());
        Ok(Self {
            dims,
            f1: f1.to_vec(),
            f2: f2.to_vec(),
        })
    }

    /// Concatenates back into `x = [f1; f2]`.
    pub fn to_concat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dims.num_vars());
        x.extend_from_slice(&self.f1);
        x.extend_from_slice(&self.f2);
        x
    }
}

/// The reduced LP: `min <c, x> s.t. A x = b, x >= 0`, with `A` kept implicit.
#[derive(Debug, Clone)]
pub struct ReducedLP {
    pub dims: GridDims,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl ReducedLP {
    pub fn new(mu1: &Histogram2D, mu2: &Histogram2D) -> Result<Self> {
        let dims = mu1.dims();
        let b = build_rhs(mu1, mu2)?;
        let c = build_cost(dims);
        Ok(Self { dims, c, b })
    }

    /// `A x`, matrix-free.
    pub fn apply_a(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply_a(x, self.dims)
    }

    /// `A^T y`, matrix-free.
    pub fn apply_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        apply_at(y, self.dims)
    }

    /// `<c, x>`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

/// Cost vector `c = [c1; c2]` with `c1[i,k,j] = (k-i)^2`, `c2[k,j,l] = (j-l)^2`.
pub fn build_cost(dims: GridDims) -> Vec<f64> {
    let (m, n) = (dims.m, dims.n);
    let mut c = vec![0.0; dims.num_vars()];
    for j in 0..n {
        for k in 0..m {
            let base = (j * m + k) * m;
            for i in 0..m {
                let d = k as f64 - i as f64;
                c[base + i] = d * d;
            }
        }
    }
    let off = dims.len_f1();
    for l in 0..n {
        for j in 0..n {
            let d = j as f64 - l as f64;
            let v = d * d;
            let base = off + (l * n + j) * m;
            for k in 0..m {
                c[base + k] = v;
            }
        }
    }
    c
}

/// Right-hand side `b = [0_M; mu1; mu2 with the (m, n) entry dropped]`.
pub fn build_rhs(mu1: &Histogram2D, mu2: &Histogram2D) -> Result<Vec<f64>> {
    if mu1.dims() != mu2.dims() {
        return Err(Error::DimensionMismatch(format!(
            "histograms have dims {}x{} and {}x{}",
            mu1.dims().m,
            mu1.dims().n,
            mu2.dims().m,
            mu2.dims().n
        )));
    }
    let dims = mu1.dims();
    let big_m = dims.num_bins();
    let mut b = vec![0.0; dims.num_rows()];
    b[big_m..2 * big_m].copy_from_slice(mu1.mass());
    b[2 * big_m..].copy_from_slice(&mu2.mass()[..big_m - 1]);
    Ok(b)
}

/// Applies the constraint operator `A` to a flow vector, writing into `out`.
///
/// Row blocks: (1) per middle node `(k, j)`: `sum_i f1 - sum_l f2`;
/// (2) per source node `(i, j)`: `sum_k f1`; (3) per target node `(k, l)`
/// excluding `(m-1, n-1)`: `sum_j f2`.
pub fn apply_a_into(x: &[f64], dims: GridDims, out: &mut [f64]) -> Result<()> {
    if x.len() != dims.num_vars() || out.len() != dims.num_rows() {
        return Err(Error::DimensionMismatch(format!(
            "apply_a: got x len {} (want {}), out len {} (want {})",
            x.len(),
            dims.num_vars(),
            out.len(),
            dims.num_rows()
        )));
    }
    let (m, n) = (dims.m, dims.n);
    let big_m = m * n;
    let (f1, f2) = x.split_at(dims.len_f1());
    out.fill(0.0);
    let (head, block3) = out.split_at_mut(2 * big_m);
    let (block1, block2) = head.split_at_mut(big_m);

    for j in 0..n {
        for k in 0..m {
            let base = (j * m + k) * m;
            let mut s = 0.0;
            for i in 0..m {
                let v = f1[base + i];
                s += v;
                block2[j * m + i] += v;
            }
            block1[j * m + k] = s;
        }
    }
    for l in 0..n {
        for j in 0..n {
            let base = (l * n + j) * m;
            for k in 0..m {
                let v = f2[base + k];
                block1[j * m + k] -= v;
                let node = l * m + k;
                if node < big_m - 1 {
                    block3[node] += v;
                }
            }
        }
    }
    Ok(())
}

/// `A x` (allocating wrapper around [`apply_a_into`]).
pub fn apply_a(x: &[f64], dims: GridDims) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dims.num_rows()];
    apply_a_into(x, dims, &mut out)?;
    Ok(out)
}

/// Applies the adjoint `A^T` to a multiplier vector, writing into `out`.
pub fn apply_at_into(y: &[f64], dims: GridDims, out: &mut [f64]) -> Result<()> {
    if y.len() != dims.num_rows() || out.len() != dims.num_vars() {
        return Err(Error::DimensionMismatch(format!(
            "apply_at: got y len {} (want {}), out len {} (want {})",
            y.len(),
            dims.num_rows(),
            out.len(),
            dims.num_vars()
        )));
    }
    let (m, n) = (dims.m, dims.n);
    let big_m = m * n;
    let (y1, rest) = y.split_at(big_m);
    let (y2, y3) = rest.split_at(big_m);
    let (g1, g2) = out.split_at_mut(dims.len_f1());

    for j in 0..n {
        for k in 0..m {
            let base = (j * m + k) * m;
            let yk = y1[j * m + k];
            for i in 0..m {
                g1[base + i] = yk + y2[j * m + i];
            }
        }
    }
    for l in 0..n {
        for j in 0..n {
            let base = (l * n + j) * m;
            for k in 0..m {
                let node = l * m + k;
                let y3v = if node < big_m - 1 { y3[node] } else { 0.0 };
                g2[base + k] = y3v - y1[j * m + k];
            }
        }
    }
    Ok(())
}

/// `A^T y` (allocating wrapper around [`apply_at_into`]).
pub fn apply_at(y: &[f64], dims: GridDims) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dims.num_vars()];
    apply_at_into(y, dims, &mut out)?;
    Ok(out)
}

/// Dense `A` assembled column by column from the matrix-free operator.
/// Test/oracle use only; `O(M_3 * N)` memory.
pub fn dense_a(dims: GridDims) -> Vec<Vec<f64>> {
    let rows = dims.num_rows();
    let cols = dims.num_vars();
    let mut a = vec![vec![0.0; cols]; rows];
    let mut e = vec![0.0; cols];
    let mut col = vec![0.0; rows];
    for cidx in 0..cols {
        e[cidx] = 1.0;
        apply_a_into(&e, dims, &mut col).expect("dims are consistent by construction");
        e[cidx] = 0.0;
        for r in 0..rows {
            a[r][cidx] = col[r];
        }
    }
    a
}
