//! Compressed sparse row linear maps with exact adjoints.

use rayon::prelude::*;

use crate::error::{dims, param, Result};

/// Sparse linear operator stored row-wise (CSR).
///
/// Rows are kept sorted by column with duplicate columns merged, so each
/// `(row, col)` pair appears at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Incremental row-by-row builder that merges repeated columns.
#[derive(Debug)]
pub struct RowBuilder {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl RowBuilder {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn with_capacity(cols: usize, rows: usize, nnz: usize) -> Self {
        let mut b = Self::new(cols);
        b.row_ptr.reserve(rows);
        b.col_idx.reserve(nnz);
        b.values.reserve(nnz);
        b
    }

    /// Appends one row. Entries may repeat a column; they are summed and
    /// exact zeros are dropped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut i = 0;
        while i < self.scratch.len() {
            let col = self.scratch[i].0;
            let mut acc = 0.0;
            while i < self.scratch.len() && self.scratch[i].0 == col {
                acc += self.scratch[i].1;
                i += 1;
            }
            if acc != 0.0 {
                self.col_idx.push(col);
                self.values.push(acc);
            }
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn finish(self) -> Result<SparseOperator> {
        SparseOperator::from_csr(self.row_ptr.len() - 1, self.cols, self.row_ptr, self.col_idx, self.values)
    }
}

impl SparseOperator {
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return dims("row pointer array inconsistent with entry count");
        }
        if col_idx.len() != values.len() {
            return dims("column and value arrays differ in length");
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return param("row pointers must be nondecreasing");
        }
        if col_idx.iter().any(|&c| c >= cols) {
            return param("column index out of range");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return param("non-finite coefficient");
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from a dense row-major matrix, skipping zeros.
    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != rows * cols {
            return dims("dense buffer size does not match shape");
        }
        let mut b = RowBuilder::new(cols);
        for r in 0..rows {
            b.push_row((0..cols).map(|c| (c, dense[r * cols + c])));
        }
        b.finish()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and coefficients of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[r * self.cols + c] += v;
            }
        }
        d
    }

    /// `out = A v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "operand length");
        assert_eq!(out.len(), self.rows, "output length");
        for (r, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *o = cols.iter().zip(vals).map(|(&c, &a)| a * v[c]).sum();
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(v, &mut out);
        out
    }

    /// `out += Aᵀ u`, scattered row by row.
    pub fn apply_adjoint_add(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.rows, "operand length");
        assert_eq!(out.len(), self.cols, "output length");
        for (r, &ur) in u.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &a) in cols.iter().zip(vals) {
                out[c] += a * ur;
            }
        }
    }

    pub fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.apply_adjoint_add(u, &mut out);
        out
    }

    /// Explicit transpose, useful when the adjoint is applied repeatedly.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                col_idx[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self { rows: self.cols, cols: self.rows, row_ptr, col_idx, values }
    }

    /// Sparse product `self · rhs`.
    pub fn compose(&self, rhs: &SparseOperator) -> Result<SparseOperator> {
        if self.cols != rhs.rows {
            return dims(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let rows: Vec<Vec<(usize, f64)>> = (0..self.rows)
            .into_par_iter()
            .map(|r| {
                let (cols, vals) = self.row(r);
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for (&k, &a) in cols.iter().zip(vals) {
                    let (rc, rv) = rhs.row(k);
                    acc.extend(rc.iter().zip(rv).map(|(&c, &b)| (c, a * b)));
                }
                acc
            })
            .collect();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut b = RowBuilder::with_capacity(rhs.cols, self.rows, nnz);
        for row in rows {
            b.push_row(row);
        }
        b.finish()
    }

    /// Diagonal of `Aᵀ diag(w) A`, i.e. per-column `Σ_i w_i A_ij²`.
    pub fn column_sq_sums(&self, row_weights: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.column_sq_sums_add(row_weights, &mut out)?;
        Ok(out)
    }

    pub fn column_sq_sums_add(&self, row_weights: &[f64], out: &mut [f64]) -> Result<()> {
        if row_weights.len() != self.rows {
            return dims(format!("{} row weights for {} rows", row_weights.len(), self.rows));
        }
        if out.len() != self.cols {
            return dims("column accumulator has wrong length");
        }
        if row_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return param("row weights must be finite and nonnegative");
        }
        for (r, &w) in row_weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &a) in cols.iter().zip(vals) {
                out[c] += w * a * a;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`SparseOperator::column_sq_sums`].
pub fn operator_column_sq_sums(op: &SparseOperator, row_weights: &[f64]) -> Result<Vec<f64>> {
    op.column_sq_sums(row_weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> SparseOperator {
        let dense: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < 0.3 { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        SparseOperator::from_dense(rows, cols, &dense).unwrap()
    }

    #[test]
    fn builder_merges_duplicates_and_drops_zeros() {
        let mut b = RowBuilder::new(3);
        b.push_row([(2, 0.5), (0, 1.0), (2, 0.25), (1, 1.0), (1, -1.0)]);
        let op = b.finish().unwrap();
        let (c, v) = op.row(0);
        assert_eq!(c, &[0, 2]);
        assert_eq!(v, &[1.0, 0.75]);
    }

    #[test]
    fn rejects_out_of_range_columns() {
        assert!(SparseOperator::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseOperator::from_csr(1, 2, vec![0, 1], vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn column_sq_sums_identity_and_zero_weights() {
        let id = SparseOperator::identity(5);
        assert_eq!(id.column_sq_sums(&[1.0; 5]).unwrap(), vec![1.0; 5]);
        assert_eq!(id.column_sq_sums(&[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(id.column_sq_sums(&[1.0; 4]).is_err());
    }

    #[test]
    fn column_sq_sums_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_sparse(8, 6, &mut rng);
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
        let dense = op.to_dense();
        let expected: Vec<f64> = (0..6)
            .map(|j| (0..8).map(|i| w[i] * dense[i * 6 + j].powi(2)).sum())
            .collect();
        let got = operator_column_sq_sums(&op, &w).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_and_transpose_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sparse(5, 7, &mut rng);
        let b = random_sparse(7, 4, &mut rng);
        let ab = a.compose(&b).unwrap().to_dense();
        let (da, db) = (a.to_dense(), b.to_dense());
        for i in 0..5 {
            for j in 0..4 {
                let e: f64 = (0..7).map(|k| da[i * 7 + k] * db[k * 4 + j]).sum();
                assert!((ab[i * 4 + j] - e).abs() < 1e-14);
            }
        }
        let at = a.transpose().to_dense();
        for i in 0..5 {
            for j in 0..7 {
                assert_eq!(at[j * 5 + i], da[i * 7 + j]);
            }
        }
        assert!(a.compose(&a).is_err());
    }
}
