//! Up-looking sparse Cholesky factorization with an approximate minimum degree
//! fill-reducing ordering.
//!
//! The symbolic phase (ordering, elimination tree, row patterns of `L`) depends only
//! on the sparsity pattern and is shared across every numeric factorization with the
//! same pattern, so a hyperparameter sweep pays for it once.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{CscMatrix, SparseSym};

const NONE: usize = usize::MAX;

/// Pattern-only analysis of a symmetric matrix.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    pinv: Vec<usize>,
    /// Lower-triangle pattern of the input (original ordering).
    in_col_ptr: Vec<usize>,
    in_row_idx: Vec<usize>,
    /// Upper triangle of the permuted matrix, column `k` holding rows `<= k`.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    in_to_c: Vec<usize>,
    parent: Vec<usize>,
    /// Row patterns of `L` (strictly lower part) in topological order.
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyzes the pattern of `a` with an AMD ordering.
    pub fn analyze(a: &SparseSym) -> Result<Arc<Self>> {
        let n = a.dim();
        let perm = if n == 0 {
            Vec::new()
        } else {
            let control = amd::Control::default();
            let (p, _, _) = amd::order::<usize>(n, a.col_ptr(), a.row_idx(), &control)
                .map_err(|s| Error::Numerical(format!("AMD ordering failed: {s:?}")))?;
            p
        };
        Ok(Arc::new(Self::with_ordering(a.as_csc(), perm)))
    }

    /// Analyzes with a caller-supplied elimination order.
    pub fn analyze_with_ordering(a: &SparseSym, perm: Vec<usize>) -> Arc<Self> {
        Arc::new(Self::with_ordering(a.as_csc(), perm))
    }

    fn with_ordering(a: &CscMatrix, perm: Vec<usize>) -> Self {
        let n = a.nrows();
        assert_eq!(perm.len(), n);
        let mut pinv = vec![NONE; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }

        // Input lower triangle, diagonal always present.
        let mut in_col_ptr = vec![0];
        let mut in_row_idx = Vec::new();
        for j in 0..n {
            let (rows, _) = a.col(j);
            let mut has_diag = false;
            for &i in rows {
                if i == j {
                    has_diag = true;
                }
                if i >= j {
                    if i > j && !has_diag {
                        in_row_idx.push(j);
                        has_diag = true;
                    }
                    in_row_idx.push(i);
                }
            }
            if !has_diag {
                in_row_idx.push(j);
            }
            in_col_ptr.push(in_row_idx.len());
        }

        // Permuted upper triangle.
        let nnz_in = in_row_idx.len();
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(nnz_in);
        for j in 0..n {
            for p in in_col_ptr[j]..in_col_ptr[j + 1] {
                let (pi, pj) = (pinv[in_row_idx[p]], pinv[j]);
                entries.push((pi.max(pj), pi.min(pj), p));
            }
        }
        entries.sort_unstable();
        let mut c_col_ptr = vec![0usize; n + 1];
        let mut c_row_idx = Vec::with_capacity(nnz_in);
        let mut in_to_c = vec![0usize; nnz_in];
        for (q, &(col, row, p)) in entries.iter().enumerate() {
            c_col_ptr[col + 1] += 1;
            c_row_idx.push(row);
            in_to_c[p] = q;
        }
        for k in 0..n {
            c_col_ptr[k + 1] += c_col_ptr[k];
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let mut i = c_row_idx[p];
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Row patterns via elimination-tree reach.
        let mut flag = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut path = vec![0usize; n];
        let mut row_ptr = vec![0];
        let mut row_cols = Vec::new();
        let mut col_counts = vec![1usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in c_col_ptr[k]..c_col_ptr[k + 1] {
                let mut i = c_row_idx[p];
                let mut len = 0;
                while flag[i] != k {
                    path[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            for &i in &stack[top..n] {
                col_counts[i] += 1;
            }
            row_cols.extend_from_slice(&stack[top..n]);
            row_ptr.push(row_cols.len());
        }

        let mut l_col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + col_counts[k];
        }
        let mut l_row_idx = vec![0usize; l_col_ptr[n]];
        let mut cursor: Vec<usize> = l_col_ptr[..n].to_vec();
        for k in 0..n {
            for &i in &row_cols[row_ptr[k]..row_ptr[k + 1]] {
                l_row_idx[cursor[i]] = k;
                cursor[i] += 1;
            }
            l_row_idx[cursor[k]] = k;
            cursor[k] += 1;
        }

        Self {
            n,
            perm,
            pinv,
            in_col_ptr,
            in_row_idx,
            c_col_ptr,
            c_row_idx,
            in_to_c,
            parent,
            row_ptr,
            row_cols,
            l_col_ptr,
            l_row_idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in the factor, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn etree_parent(&self, k: usize) -> Option<usize> {
        let p = self.parent[k];
        (p != NONE).then_some(p)
    }

    /// Number of stored lower-triangle input entries (diagonal included).
    pub fn input_nnz(&self) -> usize {
        self.in_row_idx.len()
    }

    /// Lower-triangle input pattern as `(col_ptr, row_idx)`.
    pub fn input_pattern(&self) -> (&[usize], &[usize]) {
        (&self.in_col_ptr, &self.in_row_idx)
    }

    /// Gathers the lower-triangle values of `a` in the analyzed input order.
    /// Entries of the analyzed pattern absent from `a` read as zero; entries of
    /// `a` outside the pattern are an error.
    pub fn gather_lower(&self, a: &SparseSym) -> Result<Vec<f64>> {
        if a.dim() != self.n {
            return Err(Error::Dimension(format!(
                "matrix dimension {} does not match analysis {}",
                a.dim(),
                self.n
            )));
        }
        let mut out = vec![0.0; self.in_row_idx.len()];
        for j in 0..self.n {
            let (rows, vals) = a.col(j);
            let pat = &self.in_row_idx[self.in_col_ptr[j]..self.in_col_ptr[j + 1]];
            let mut q = 0;
            for (&i, &v) in rows.iter().zip(vals) {
                if i < j {
                    continue;
                }
                while q < pat.len() && pat[q] < i {
                    q += 1;
                }
                if q == pat.len() || pat[q] != i {
                    return Err(Error::Dimension(format!(
                        "entry ({i}, {j}) outside the analyzed pattern"
                    )));
                }
                out[self.in_col_ptr[j] + q] = v;
            }
        }
        Ok(out)
    }

    /// Position of original entry `(i, j)` (`i >= j`) within the lower input pattern.
    pub fn input_position(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let pat = &self.in_row_idx[self.in_col_ptr[j]..self.in_col_ptr[j + 1]];
        pat.binary_search(&i).ok().map(|q| self.in_col_ptr[j] + q)
    }

    fn l_position(&self, pi: usize, pj: usize) -> Option<usize> {
        let (row, col) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        let rows = &self.l_row_idx[self.l_col_ptr[col]..self.l_col_ptr[col + 1]];
        rows.binary_search(&row)
            .ok()
            .map(|q| self.l_col_ptr[col] + q)
    }
}

/// Numeric factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_values: Vec<f64>,
}

impl CholeskyFactor {
    /// Analyzes and factorizes in one go.
    pub fn new(a: &SparseSym) -> Result<Self> {
        let sym = SymbolicCholesky::analyze(a)?;
        Self::factorize(sym, a)
    }

    pub fn factorize(symbolic: Arc<SymbolicCholesky>, a: &SparseSym) -> Result<Self> {
        let values = symbolic.gather_lower(a)?;
        Self::factorize_lower_values(symbolic, &values)
    }

    /// Factorizes from lower-triangle values laid out as in
    /// [`SymbolicCholesky::input_pattern`].
    pub fn factorize_lower_values(symbolic: Arc<SymbolicCholesky>, lower: &[f64]) -> Result<Self> {
        let s = &*symbolic;
        assert_eq!(lower.len(), s.in_row_idx.len());
        let n = s.n;
        let mut cx = vec![0.0; lower.len()];
        for (p, &v) in lower.iter().enumerate() {
            cx[s.in_to_c[p]] = v;
        }
        let mut lx = vec![0.0; s.l_row_idx.len()];
        let mut x = vec![0.0; n];
        let mut cursor: Vec<usize> = s.l_col_ptr[..n].to_vec();
        for k in 0..n {
            for p in s.c_col_ptr[k]..s.c_col_ptr[k + 1] {
                x[s.c_row_idx[p]] = cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &s.row_cols[s.row_ptr[k]..s.row_ptr[k + 1]] {
                let lki = x[i] / lx[s.l_col_ptr[i]];
                x[i] = 0.0;
                for p in s.l_col_ptr[i] + 1..cursor[i] {
                    x[s.l_row_idx[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                lx[cursor[i]] = lki;
                cursor[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: s.perm[k],
                    value: d,
                });
            }
            lx[cursor[k]] = d.sqrt();
            cursor[k] += 1;
        }
        Ok(Self {
            symbolic,
            l_values: lx,
        })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n)
            .map(|k| self.l_values[s.l_col_ptr[k]].ln())
            .sum::<f64>()
    }

    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let start = s.l_col_ptr[j];
            y[j] /= self.l_values[start];
            let yj = y[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[p]] -= self.l_values[p] * yj;
            }
        }
    }

    fn backward(&self, x: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let start = s.l_col_ptr[j];
            let mut acc = x[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                acc -= self.l_values[p] * x[s.l_row_idx[p]];
            }
            x[j] = acc / self.l_values[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(b.len(), s.n);
        let mut w: Vec<f64> = s.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut w);
        self.backward(&mut w);
        let mut x = vec![0.0; s.n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = w[k];
        }
        x
    }

    /// Maps a standard normal vector `z` to a draw from `N(0, A⁻¹)` by solving
    /// `Lᵀ v = z` in the permuted space.
    pub fn sample_with(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(z.len(), s.n);
        let mut w = z.to_vec();
        self.backward(&mut w);
        let mut x = vec![0.0; s.n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = w[k];
        }
        x
    }

    /// Entries of `A⁻¹` on the pattern of `L + Lᵀ` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &*self.symbolic;
        let (lp, li, lx) = (&s.l_col_ptr, &s.l_row_idx, &self.l_values);
        let mut sig = vec![0.0; li.len()];
        // Position of each row within the current column, and the running
        // sums Σ_k L_ki Σ_kj indexed by row j.
        let mut pos = vec![usize::MAX; s.n];
        let mut acc = vec![0.0; s.n];
        for i in (0..s.n).rev() {
            let (start, end) = (lp[i], lp[i + 1]);
            let lii = lx[start];
            for a in start + 1..end {
                pos[li[a]] = a;
                acc[li[a]] = 0.0;
            }
            // Each pair (k, j) of rows of column i is stored once, in column
            // min(k, j), which already holds its final value.
            for b in start + 1..end {
                let k = li[b];
                let lki = lx[b];
                let (ks, ke) = (lp[k], lp[k + 1]);
                acc[k] += lki * sig[ks];
                for q in ks + 1..ke {
                    let pr = pos[li[q]];
                    if pr != usize::MAX {
                        acc[li[q]] += lki * sig[q];
                        acc[k] += lx[pr] * sig[q];
                    }
                }
            }
            let mut diag = 0.0;
            for a in start + 1..end {
                sig[a] = -acc[li[a]] / lii;
                diag += lx[a] * sig[a];
                pos[li[a]] = usize::MAX;
            }
            sig[start] = (1.0 / lii - diag) / lii;
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            values: sig,
        }
    }
}

/// `A⁻¹` restricted to the fill pattern of the factor; this always covers the
/// pattern of `A` itself.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
}

impl SelectedInverse {
    /// `(A⁻¹)_{ij}` when `(i, j)` lies in the fill pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        s.l_position(s.pinv[i], s.pinv[j]).map(|p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let s = &self.symbolic;
        (0..s.n)
            .map(|i| self.values[s.l_col_ptr[s.pinv[i]]])
            .collect()
    }
}
