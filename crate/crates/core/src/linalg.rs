//! Sparse operators with zero row sums and a banded LU for the shifted
//! systems `shift * I + scale * L`.
//!
//! Operators are stored through their off-diagonal couplings `c_ij >= 0`:
//! `(L u)_i = sum_j c_ij (u_i - u_j)`. Applying `L` in this difference form
//! keeps constants in the kernel exactly, which matters when solutions carry a
//! large constant part (the `1/delta` mode of discounted problems).
//!
//! For an M-matrix Gaussian elimination without pivoting is stable and keeps
//! the band, so the factorization is a plain banded LU.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-compressed couplings of an operator with zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    couplings: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(column, coupling)` lists. Duplicate columns are
    /// merged; diagonal entries are rejected.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut couplings = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, c) in row {
                assert!(j != i, "diagonal coupling in row {i}");
                assert!(j < n, "column {j} out of range");
                if last == Some(j) {
                    *couplings.last_mut().unwrap() += c;
                } else {
                    cols.push(j);
                    couplings.push(c);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            couplings,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.couplings[a..b].iter().copied())
    }

    /// Diagonal entry `L_ii = sum_j c_ij`.
    pub fn diagonal(&self, i: usize) -> f64 {
        self.row(i).map(|(_, c)| c).sum()
    }

    pub fn min_coupling(&self) -> f64 {
        self.couplings.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|i - j|` over stored couplings, as `(lower, upper)`.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut hi = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    lo = lo.max(i - j);
                } else {
                    hi = hi.max(j - i);
                }
            }
        }
        (lo, hi)
    }

    /// `out = L u` in difference form.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.n);
        assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let ui = u[i];
            let mut acc = 0.0;
            for (j, c) in self.row(i) {
                acc += c * (ui - u[j]);
            }
            out[i] = acc;
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        out
    }

    /// `L^T m`.
    pub fn apply_transpose(&self, m: &[f64]) -> Vec<f64> {
        assert_eq!(m.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let mi = m[i];
            for (j, c) in self.row(i) {
                out[i] += c * mi;
                out[j] -= c * mi;
            }
        }
        out
    }

    /// Entry `(i, j)` of `L`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diagonal(i)
        } else {
            -self.row(i).filter(|&(c, _)| c == j).map(|(_, c)| c).sum::<f64>()
        }
    }
}

/// LU factors of `shift * I + scale * L` in band storage, no pivoting.
///
/// Row `i` stores columns `i - lower ..= i + upper`; the unit lower factor and
/// the upper factor share the storage.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandLu {
    pub fn factor(op: &SparseOperator, shift: f64, scale: f64) -> Result<Self> {
        let n = op.dim();
        let (lower, upper) = op.bandwidths();
        let width = lower + upper + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            let base = i * width;
            data[base + lower] = shift + scale * op.diagonal(i);
            for (j, c) in op.row(i) {
                data[base + j + lower - i] -= scale * c;
            }
        }
        let mut lu = Self {
            n,
            lower,
            upper,
            width,
            data,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, lower, upper, width) = (self.n, self.lower, self.upper, self.width);
        for k in 0..n {
            let pivot = self.data[k * width + lower];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::BadPivot { row: k, pivot });
            }
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            if last_row == k {
                continue;
            }
            let span = last_col - k;
            let (head, tail) = self.data.split_at_mut((k + 1) * width);
            let pivot_row = &head[k * width + lower + 1..k * width + lower + 1 + span];
            let rows = &mut tail[..(last_row - k) * width];
            let update = |(r, row): (usize, &mut [f64])| {
                let i = k + 1 + r;
                let off = k + lower - i;
                let l = row[off];
                if l != 0.0 {
                    let l = l / pivot;
                    row[off] = l;
                    let target = &mut row[off + 1..off + 1 + span];
                    for (t, &p) in target.iter_mut().zip(pivot_row) {
                        *t -= l * p;
                    }
                }
            };
            if span * (last_row - k) > 1 << 14 {
                rows.par_chunks_mut(width).enumerate().for_each(update);
            } else {
                rows.chunks_mut(width).enumerate().for_each(update);
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, lower, upper, width) = (self.n, self.lower, self.upper, self.width);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let first = i.saturating_sub(lower);
            let row = &self.data[i * width..];
            let mut acc = b[i];
            for (j, bj) in b.iter().enumerate().take(i).skip(first) {
                acc -= row[j + lower - i] * bj;
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let last = (i + upper).min(n - 1);
            let row = &self.data[i * width..];
            let mut acc = b[i];
            for j in i + 1..=last {
                acc -= row[j + lower - i] * b[j];
            }
            b[i] = acc / row[lower];
        }
    }

    /// Solves `A^T x = b` in place with the same factors.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let (n, lower, upper, width) = (self.n, self.lower, self.upper, self.width);
        assert_eq!(b.len(), n);
        // U^T z = b
        for k in 0..n {
            let row = &self.data[k * width..];
            let zk = b[k] / row[lower];
            b[k] = zk;
            let last = (k + upper).min(n - 1);
            for j in k + 1..=last {
                b[j] -= row[j + lower - k] * zk;
            }
        }
        // L^T x = z
        for k in (0..n).rev() {
            let row = &self.data[k * width..];
            let xk = b[k];
            let first = k.saturating_sub(lower);
            for i in first..k {
                b[i] -= row[i + lower - k] * xk;
            }
        }
    }
}

/// Factored `shift * I + scale * L` together with the residual check.
#[derive(Debug, Clone)]
pub struct ShiftedSolver<'a> {
    op: &'a SparseOperator,
    shift: f64,
    scale: f64,
    lu: BandLu,
}

/// Relative residual target shared by every linear solve.
pub const RESIDUAL_TARGET: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 4;

impl<'a> ShiftedSolver<'a> {
    pub fn new(op: &'a SparseOperator, shift: f64, scale: f64) -> Result<Self> {
        let lu = BandLu::factor(op, shift, scale)?;
        Ok(Self { op, shift, scale, lu })
    }

    /// `b - (shift I + scale L) x`
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let lx = self.op.apply(x);
        b.iter()
            .zip(x)
            .zip(&lx)
            .map(|((&bi, &xi), &li)| bi - (self.shift * xi + self.scale * li))
            .collect()
    }

    /// Solves with iterative refinement until `|r|_inf <= 1e-10 |b|_inf`.
    ///
    /// The iterate is kept as `kappa + v` with a constant offset `kappa`.
    /// Constants are in the kernel of `L`, so the residual of `v` carries no
    /// rounding from the (possibly large) common level of the solution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x);
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let kappa = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { 0.0 };
        let mut v: Vec<f64> = x.iter().map(|xi| xi - kappa).collect();
        let shifted_b: Vec<f64> = b.iter().map(|bi| bi - self.shift * kappa).collect();
        let target = RESIDUAL_TARGET * sup(b).max(f64::MIN_POSITIVE);
        let mut r = self.residual(&v, &shifted_b);
        let mut res = sup(&r);
        let mut rounds = 0;
        while res > target {
            if rounds == MAX_REFINEMENTS || !res.is_finite() {
                return Err(Error::SolveFailed { residual: res, target });
            }
            self.lu.solve_in_place(&mut r);
            for (vi, di) in v.iter_mut().zip(&r) {
                *vi += di;
            }
            r = self.residual(&v, &shifted_b);
            res = sup(&r);
            rounds += 1;
        }
        Ok(v.into_iter().map(|vi| vi + kappa).collect())
    }

    /// Solves `(shift I + scale L)^T x = b` without refinement.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.lu.solve_transpose_in_place(&mut x);
        x
    }
}

pub(crate) fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
