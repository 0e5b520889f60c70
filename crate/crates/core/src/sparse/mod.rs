//! Compressed sparse column storage and the symmetric sparse matrices used for
//! finite-element matrices and GMRF precisions.

mod cholesky;

pub use cholesky::{CholeskyFactor, SelectedInverse, SymbolicCholesky};

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-compressed sparse matrix with sorted, duplicate-free row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    /// Explicit zeros are kept as structural entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let p = next[j];
            rows[p] = i;
            vals[p] = v;
            next[j] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((counts[j]..counts[j + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            for &(i, v) in &scratch {
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == i {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let q = next[i];
                row_idx[q] = j;
                values[q] = self.values[p];
                next[i] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols)
            .map(|j| {
                (self.col_ptr[j]..self.col_ptr[j + 1])
                    .map(|p| self.values[p] * x[self.row_idx[p]])
                    .sum()
            })
            .collect()
    }

    /// Sparse product `A B` (Gustavson's algorithm).
    pub fn matmul(&self, other: &CscMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in matmul");
        let mut mark = vec![usize::MAX; self.nrows];
        let mut acc = vec![0.0; self.nrows];
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        for j in 0..other.ncols {
            touched.clear();
            for q in other.col_ptr[j]..other.col_ptr[j + 1] {
                let k = other.row_idx[q];
                let bkj = other.values[q];
                for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                    let i = self.row_idx[p];
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = 0.0;
                        touched.push(i);
                    }
                    acc[i] += self.values[p] * bkj;
                }
            }
            touched.sort_unstable();
            for &i in &touched {
                row_idx.push(i);
                values.push(acc[i]);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: other.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// `alpha A + beta B` over the union pattern.
    pub fn add_scaled(&self, alpha: f64, other: &CscMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for j in 0..self.ncols {
            let (ra, va) = self.col(j);
            let (rb, vb) = other.col(j);
            let (mut a, mut b) = (0, 0);
            while a < ra.len() || b < rb.len() {
                let ia = ra.get(a).copied().unwrap_or(usize::MAX);
                let ib = rb.get(b).copied().unwrap_or(usize::MAX);
                if ia == ib {
                    row_idx.push(ia);
                    values.push(alpha * va[a] + beta * vb[b]);
                    a += 1;
                    b += 1;
                } else if ia < ib {
                    row_idx.push(ia);
                    values.push(alpha * va[a]);
                    a += 1;
                } else {
                    row_idx.push(ib);
                    values.push(beta * vb[b]);
                    b += 1;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(d) A`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for (v, &i) in out.values.iter_mut().zip(&self.row_idx) {
            *v *= d[i];
        }
        out
    }

    /// `A diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.ncols);
        let mut out = self.clone();
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                out.values[p] *= d[j];
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.nrows];
        for (i, _, v) in self.triplets() {
            s[i] += v;
        }
        s
    }

    /// Horizontal concatenation `[A B ...]`.
    pub fn hstack(blocks: &[&CscMatrix]) -> Self {
        let nrows = blocks.first().map_or(0, |b| b.nrows);
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for b in blocks {
            assert_eq!(b.nrows, nrows, "row mismatch in hstack");
            for j in 0..b.ncols {
                let (r, v) = b.col(j);
                row_idx.extend_from_slice(r);
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
        }
        Self {
            nrows,
            ncols: col_ptr.len() - 1,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&CscMatrix]) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut row_off = 0;
        for b in blocks {
            for j in 0..b.ncols {
                let (r, v) = b.col(j);
                row_idx.extend(r.iter().map(|&i| i + row_off));
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
            row_off += b.nrows;
        }
        Self {
            nrows: row_off,
            ncols: col_ptr.len() - 1,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Keeps entries with `row >= col`.
    pub fn lower_triangle(&self) -> Self {
        let trip: Vec<_> = self.triplets().filter(|&(i, j, _)| i >= j).collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Square sparse matrix stored with both triangles, symmetric to a relative
/// tolerance of 1e-12.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym(CscMatrix);

impl SparseSym {
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(m: CscMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows, m.ncols
            )));
        }
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for (i, j, v) in m.triplets() {
            if i > j {
                let w = m.get(j, i);
                if (v - w).abs() > Self::SYMMETRY_TOL * scale {
                    return Err(Error::Dimension(format!(
                        "matrix not symmetric at ({i}, {j}): {v} vs {w}"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be symmetric by construction.
    pub(crate) fn new_unchecked(m: CscMatrix) -> Self {
        debug_assert_eq!(m.nrows, m.ncols);
        Self(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(CscMatrix::from_diagonal(diag))
    }

    /// Builds from lower-or-upper triplets, mirroring off-diagonal entries.
    pub fn from_lower_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut full = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in triplets {
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        Self(CscMatrix::from_triplets(n, n, &full))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows
    }

    pub fn as_csc(&self) -> &CscMatrix {
        &self.0
    }

    pub fn into_csc(self) -> CscMatrix {
        self.0
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.0.mul_vec(x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.scaled(s))
    }

    pub fn add_scaled(&self, alpha: f64, other: &SparseSym, beta: f64) -> Self {
        Self(self.0.add_scaled(alpha, &other.0, beta))
    }

    pub fn block_diag(blocks: &[&SparseSym]) -> Self {
        let inner: Vec<&CscMatrix> = blocks.iter().map(|b| &b.0).collect();
        Self(CscMatrix::block_diag(&inner))
    }

    /// `D S D` for diagonal `D`.
    pub fn congruence_diag(&self, d: &[f64]) -> Self {
        Self(self.0.scale_rows(d).scale_cols(d))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.0.to_dense()
    }

    /// Matrix Market coordinate export (symmetric, lower triangle).
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<_> = self.0.triplets().filter(|&(i, j, _)| i >= j).collect();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.dim(), self.dim(), lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
        }
        s
    }
}

impl std::ops::Deref for SparseSym {
    type Target = CscMatrix;
    fn deref(&self) -> &CscMatrix {
        &self.0
    }
}
