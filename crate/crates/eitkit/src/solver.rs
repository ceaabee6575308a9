//! Sparse symmetric linear algebra for the assembled systems.
//!
//! The forward problem produces a symmetric positive definite matrix with a
//! very particular shape once the element interiors are eliminated: a banded
//! block over the edge-trace unknowns (edges are numbered so that unknowns
//! coupled through any element stay within a `2n+2` index window) bordered by
//! a handful of dense electrode-voltage columns. This module provides exactly
//! the pieces that shape needs:
//!
//! * [`Csr`] — general sparse symmetric storage for residual checks,
//!   matrix-vector products, and iterative solves;
//! * [`BandedSpd`] — in-place banded Cholesky;
//! * [`BorderedSpd`] — banded-plus-dense-border Cholesky via a small Schur
//!   complement on the border block;
//! * [`pcg`] — Jacobi-preconditioned conjugate gradients as the fallback
//!   when a factorization would not fit in memory;
//! * [`ZeroSumBasis`] — an orthonormal basis of the zero-sum subspace of
//!   `R^L`, used to keep the voltage unknowns free of the constant mode.
//!
//! Dense matrices here are tiny (the border is one column per electrode
//! voltage), so the dense kernels are straightforward loops.

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// CSR
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix; the full symmetric matrix is stored (both
/// triangles) so that matrix-vector products are single sweeps.
#[derive(Debug, Clone)]
pub struct Csr {
    /// Matrix dimension.
    pub n: usize,
    /// Row start offsets, length `n + 1`.
    pub row_ptr: Vec<usize>,
    /// Column indices, sorted within each row.
    pub col_idx: Vec<usize>,
    /// Entry values aligned with `col_idx`.
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from unordered triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) outside {n}x{n}");
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut col_idx = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            let slot = next[i];
            col_idx[slot] = j;
            vals[slot] = v;
            next[i] += 1;
        }
        // Sort each row by column and merge duplicates.
        let mut out_col = Vec::with_capacity(triplets.len());
        let mut out_val = Vec::with_capacity(triplets.len());
        let mut row_ptr = vec![0usize; n + 1];
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            for k in counts[i]..counts[i + 1] {
                scratch.push((col_idx[k], vals[k]));
            }
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in scratch.iter() {
                if out_col.len() > row_ptr[i] && *out_col.last().unwrap() == c {
                    *out_val.last_mut().unwrap() += v;
                } else {
                    out_col.push(c);
                    out_val.push(v);
                }
            }
            row_ptr[i + 1] = out_col.len();
        }
        Csr {
            n,
            row_ptr,
            col_idx: out_col,
            vals: out_val,
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Relative residual `|A x - b| / |b|` (or absolute when `b = 0`).
    pub fn residual_rel(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n];
        self.matvec(x, &mut ax);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.n {
            num += (ax[i] - b[i]).powi(2);
            den += b[i] * b[i];
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// All stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |k| (i, self.col_idx[k], self.vals[k]))
        })
    }

    /// Largest relative asymmetry `|a_ij - a_ji|` over the stored pattern,
    /// scaled by the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self
            .vals
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for (i, j, v) in self.entries() {
            if j < i {
                continue;
            }
            let vt = self.get(j, i);
            worst = worst.max((v - vt).abs());
        }
        worst / scale
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// Main diagonal, for Jacobi preconditioning.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

// ---------------------------------------------------------------------------
// Banded Cholesky
// ---------------------------------------------------------------------------

/// Symmetric positive definite matrix with lower bandwidth `bw`, storing the
/// lower triangle column-wise: entry `(i, j)` with `0 <= i - j <= bw` lives
/// at `data[j * (bw + 1) + (i - j)]`, so each column is contiguous.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    /// Dimension.
    pub n: usize,
    /// Lower bandwidth.
    pub bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    /// Zero matrix of the given dimension and bandwidth.
    pub fn zeros(n: usize, bw: usize) -> BandedSpd {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    /// Adds `v` at `(i, j)`; requires `i >= j` (lower triangle) within band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i >= j && i - j <= self.bw && i < self.n,
            "entry ({i},{j}) outside lower band {} of dimension {}",
            self.bw,
            self.n
        );
        self.data[j * (self.bw + 1) + (i - j)] += v;
    }

    /// Entry `(i, j)` of the lower triangle (zero outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i >= j);
        if i - j > self.bw {
            0.0
        } else {
            self.data[j * (self.bw + 1) + (i - j)]
        }
    }

    /// In-place Cholesky `A = L L^T`; afterwards the storage holds `L`.
    ///
    /// Fails on a non-positive pivot, which for these systems signals a
    /// conductivity or impedance outside its admissible range rather than
    /// numerical trouble.
    pub fn cholesky(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        for j in 0..n {
            let start = j * stride;
            let m = bw.min(n - 1 - j);
            let pivot = self.data[start];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::Factorization { row: j, pivot });
            }
            let p = pivot.sqrt();
            self.data[start] = p;
            for r in 1..=m {
                self.data[start + r] /= p;
            }
            // Rank-1 update of the trailing columns inside the band.
            let (left, right) = self.data.split_at_mut(start + stride);
            let colj = &left[start + 1..start + 1 + m];
            for k in 1..=m {
                let ljk = colj[k - 1];
                if ljk == 0.0 {
                    continue;
                }
                let off = (k - 1) * stride;
                let ck = &mut right[off..off + (m - k + 1)];
                let src = &colj[k - 1..];
                for r in 0..ck.len() {
                    ck[r] -= ljk * src[r];
                }
            }
        }
        Ok(())
    }

    /// Forward substitution `L y = b` (after [`BandedSpd::cholesky`]).
    pub fn forward_sub(&self, b: &mut [f64]) {
        let stride = self.bw + 1;
        for j in 0..self.n {
            let start = j * stride;
            let yj = b[j] / self.data[start];
            b[j] = yj;
            let m = self.bw.min(self.n - 1 - j);
            for r in 1..=m {
                b[j + r] -= self.data[start + r] * yj;
            }
        }
    }

    /// Back substitution `L^T x = y` (after [`BandedSpd::cholesky`]).
    pub fn back_sub(&self, y: &mut [f64]) {
        let stride = self.bw + 1;
        for j in (0..self.n).rev() {
            let start = j * stride;
            let m = self.bw.min(self.n - 1 - j);
            let mut acc = y[j];
            for r in 1..=m {
                acc -= self.data[start + r] * y[j + r];
            }
            y[j] = acc / self.data[start];
        }
    }

    /// Convenience: solve `A x = b` given the factored matrix.
    pub fn solve(&self, b: &mut [f64]) {
        self.forward_sub(b);
        self.back_sub(b);
    }

    /// Bytes of factor storage, for memory-based strategy decisions.
    pub fn storage_bytes(n: usize, bw: usize) -> usize {
        n * (bw + 1) * std::mem::size_of::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Bordered system
// ---------------------------------------------------------------------------

/// SPD matrix of the form `[B C; C^T D]` with banded `B` (dimension `n`) and
/// a dense border `C` of `m` columns.
#[derive(Debug, Clone)]
pub struct BorderedSpd {
    /// Banded leading block.
    pub band: BandedSpd,
    /// Border columns, column-major: `border[c * n + i] = C[i][c]`.
    pub border: Vec<f64>,
    /// Trailing dense block `D`, row-major `m x m`.
    pub corner: Vec<f64>,
    /// Border width `m`.
    pub m: usize,
}

/// Cholesky factorization of a [`BorderedSpd`].
#[derive(Debug, Clone)]
pub struct BorderedFactor {
    band: BandedSpd, // holds L_B
    w: Vec<f64>,     // W = L_B^{-1} C, column-major
    corner: DenseChol,
    n: usize,
    m: usize,
}

impl BorderedSpd {
    /// Zero system with the given block dimensions.
    pub fn zeros(n: usize, bw: usize, m: usize) -> BorderedSpd {
        BorderedSpd {
            band: BandedSpd::zeros(n, bw),
            border: vec![0.0; n * m],
            corner: vec![0.0; m * m],
            m,
        }
    }

    /// Adds `v` to border entry `(i, c)` (row in the banded block, border
    /// column `c`).
    pub fn add_border(&mut self, i: usize, c: usize, v: f64) {
        self.border[c * self.band.n + i] += v;
    }

    /// Adds `v` to corner entry `(r, c)`.
    pub fn add_corner(&mut self, r: usize, c: usize, v: f64) {
        self.corner[r * self.m + c] += v;
    }

    /// Factors the system; consumes the assembled matrix.
    pub fn factorize(mut self) -> Result<BorderedFactor> {
        let n = self.band.n;
        let m = self.m;
        self.band.cholesky()?;
        // W = L^{-1} C, one forward substitution per border column.
        for c in 0..m {
            self.band.forward_sub(&mut self.border[c * n..(c + 1) * n]);
        }
        // Schur complement S = D - W^T W.
        let mut s = self.corner;
        for r in 0..m {
            for c in 0..=r {
                let wr = &self.border[r * n..(r + 1) * n];
                let wc = &self.border[c * n..(c + 1) * n];
                let dot: f64 = wr.iter().zip(wc).map(|(a, b)| a * b).sum();
                s[r * m + c] -= dot;
                if r != c {
                    s[c * m + r] -= dot;
                }
            }
        }
        let corner = DenseChol::new(m, s).map_err(|e| match e {
            Error::Factorization { row, pivot } => Error::Factorization {
                row: n + row,
                pivot,
            },
            other => other,
        })?;
        Ok(BorderedFactor {
            band: self.band,
            w: self.border,
            corner,
            n,
            m,
        })
    }
}

impl BorderedFactor {
    /// Solves in place; `b` is the stacked right-hand side of length `n + m`.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        assert_eq!(b.len(), n + m, "right-hand side length");
        let (b1, b2) = b.split_at_mut(n);
        // y1 = L^{-1} b1; reduce the border RHS: b2 -= W^T y1.
        self.band.forward_sub(b1);
        for c in 0..m {
            let wc = &self.w[c * n..(c + 1) * n];
            let dot: f64 = wc.iter().zip(b1.iter()).map(|(a, b)| a * b).sum();
            b2[c] -= dot;
        }
        // Border unknowns, then back-substitute the banded part.
        self.corner.solve(b2);
        for c in 0..m {
            let wc = &self.w[c * n..(c + 1) * n];
            let xc = b2[c];
            for i in 0..n {
                b1[i] -= wc[i] * xc;
            }
        }
        self.band.back_sub(b1);
    }
}

// ---------------------------------------------------------------------------
// Small dense Cholesky
// ---------------------------------------------------------------------------

/// Dense Cholesky for the small border Schur complements.
#[derive(Debug, Clone)]
pub struct DenseChol {
    n: usize,
    /// Lower factor, row-major.
    l: Vec<f64>,
}

impl DenseChol {
    /// Factors a row-major symmetric matrix.
    pub fn new(n: usize, mut a: Vec<f64>) -> Result<DenseChol> {
        assert_eq!(a.len(), n * n);
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Factorization { row: j, pivot: d });
            }
            let p = d.sqrt();
            a[j * n + j] = p;
            for i in j + 1..n {
                let mut v = a[i * n + j];
                for k in 0..j {
                    v -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = v / p;
            }
        }
        Ok(DenseChol { n, l: a })
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }
}

// ---------------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------------

/// Jacobi-preconditioned conjugate gradients to relative residual `tol`.
///
/// Returns the solution and the iteration count. The caller supplies the
/// (positive) diagonal for preconditioning.
pub fn pcg(
    a: &Csr,
    b: &[f64],
    diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    assert_eq!(b.len(), n);
    assert_eq!(diag.len(), n);
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let inv_d: Vec<f64> = diag
        .iter()
        .map(|&d| {
            debug_assert!(d > 0.0, "Jacobi preconditioner needs a positive diagonal");
            1.0 / d
        })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Factorization {
                row: it,
                pivot: pap,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = {
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        ax.iter()
            .zip(b)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / bnorm
    };
    Err(Error::NoConvergence {
        solver: "pcg",
        iters: max_iter,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Zero-sum basis
// ---------------------------------------------------------------------------

/// Orthonormal basis of the zero-sum subspace `{ u in R^L : sum u = 0 }`.
///
/// Column `j` (0-based, `j < L-1`) has `1/sqrt((j+1)(j+2))` in its first
/// `j+1` entries and `-(j+1)/sqrt((j+1)(j+2))` at entry `j+1`. Columns are
/// exactly zero-sum and mutually orthonormal, so expressing voltages as
/// `U = B w` removes the constant mode while keeping the system symmetric.
#[derive(Debug, Clone, Copy)]
pub struct ZeroSumBasis {
    /// Ambient dimension `L`.
    pub l: usize,
}

impl ZeroSumBasis {
    /// Basis for `R^L`; requires `L >= 2`.
    pub fn new(l: usize) -> ZeroSumBasis {
        assert!(l >= 2, "zero-sum basis needs dimension >= 2, got {l}");
        ZeroSumBasis { l }
    }

    /// Entry `B[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.l && j + 1 < self.l);
        let jp = (j + 1) as f64;
        let norm = (jp * (jp + 1.0)).sqrt();
        if i <= j {
            1.0 / norm
        } else if i == j + 1 {
            -jp / norm
        } else {
            0.0
        }
    }

    /// `U = B w`, mapping `L-1` coefficients to a zero-sum vector.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.l - 1);
        let mut u = vec![0.0; self.l];
        for j in 0..self.l - 1 {
            if w[j] == 0.0 {
                continue;
            }
            for i in 0..=j + 1 {
                u[i] += self.entry(i, j) * w[j];
            }
        }
        u
    }

    /// `w = B^T u`; for zero-sum `u` this inverts [`ZeroSumBasis::apply`].
    pub fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.l);
        (0..self.l - 1)
            .map(|j| (0..=j + 1).map(|i| self.entry(i, j) * u[i]).sum())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
