//! Sparse and dense matrix types and the kernels every graph operation is
//! built on.
//!
//! Graphs are carried as CSR matrices with 64-bit float values. Undirected
//! graphs store both `(i, j)` and `(j, i)` entries so one `spmm` path serves
//! everything. All types are immutable after construction and the kernels are
//! pure functions.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Degree floor used when normalizing rows with zero degree.
pub const DEGREE_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major values; rejects wrong lengths and
    /// non-finite entries.
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {}x{} matrix, got {}",
                n_rows * n_cols,
                n_rows,
                n_cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dense matrix entry {v}")));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(n_rows, n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.values[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        self.values[i * self.n_cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Plain dense product; also serves as the oracle for the sparse kernels.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != other.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// CooMatrix
// ---------------------------------------------------------------------------

/// Coordinate-format sparse matrix, the construction-time carrier for
/// adjacency data. `canonicalize` sorts row-major and sums duplicates so
/// multigraph inputs degrade gracefully.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        Self {
            n_rows,
            n_cols,
            entries,
        }
    }

    /// Sorts entries row-major and sums duplicate positions. Summation order
    /// is the sorted order, so results are reproducible.
    pub fn canonicalize(&self) -> Result<CooMatrix> {
        for &(r, c, _) in &self.entries {
            if r >= self.n_rows || c >= self.n_cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    rows: self.n_rows,
                    cols: self.n_cols,
                });
            }
        }
        let mut sorted = self.entries.clone();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        Ok(CooMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            entries,
        })
    }

    /// Lossless conversion to CSR. Expects canonical input.
    pub fn to_csr(&self) -> Result<CsrMatrix> {
        let canon = self.canonicalize()?;
        let nnz = canon.entries.len();
        let mut row_offsets = vec![0usize; canon.n_rows + 1];
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for &(r, c, v) in &canon.entries {
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..canon.n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(CsrMatrix {
            n_rows: canon.n_rows,
            n_cols: canon.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }
}

// ---------------------------------------------------------------------------
// CsrMatrix
// ---------------------------------------------------------------------------

/// Compressed-sparse-row matrix, the universal graph carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Empty matrix (no stored entries).
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a symmetric adjacency from undirected edges, storing both
    /// directions. Self loops and duplicate pairs are rejected.
    pub fn from_undirected_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
    ) -> Result<CsrMatrix> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for &(u, v, w) in edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::IndexOutOfRange {
                    row: u.max(v),
                    col: u.min(v),
                    rows: n,
                    cols: n,
                });
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate undirected edge ({}, {})",
                    key.0, key.1
                )));
            }
            entries.push((u, v, w));
            entries.push((v, u, w));
        }
        CooMatrix::new(n, n, entries).to_csr()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                entries.push((i, c, v));
            }
        }
        CooMatrix::new(self.n_rows, self.n_cols, entries)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(i, c, v);
            }
        }
        out
    }

    /// Row sums of stored values.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if self.get(j, i) != Some(v) {
                    return false;
                }
            }
        }
        true
    }

    /// Sparse-dense product `self * x`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != x.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "spmm {}x{} by {}x{}",
                self.n_rows,
                self.n_cols,
                x.n_rows(),
                x.n_cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.n_rows, x.n_cols());
        for i in 0..self.n_rows {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let dst = out.row_mut(i);
            for k in s..e {
                let a = self.values[k];
                let src = x.row(self.col_indices[k]);
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += a * v;
                }
            }
        }
        Ok(out)
    }

    /// Increments every diagonal entry by `w`, inserting missing diagonals.
    pub fn add_self_loops(&self, w: f64) -> Result<CsrMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        let mut coo = self.to_coo();
        for i in 0..self.n_rows {
            coo.entries.push((i, i, w));
        }
        coo.to_csr()
    }

    /// Symmetric degree normalization: entry `(i, j)` is scaled by
    /// `1/sqrt(max(d_i, eps) * max(d_j, eps))` with `d` the row sums.
    /// Rejects negative entries; callers must apply a nonnegative
    /// activation first.
    pub fn sym_normalize(&self, eps: f64) -> Result<CsrMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        let inv_sqrt: Vec<f64> = self
            .row_sums()
            .iter()
            .map(|&d| 1.0 / d.max(eps).sqrt())
            .collect();
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let (s, e) = (out.row_offsets[i], out.row_offsets[i + 1]);
            for k in s..e {
                out.values[k] *= inv_sqrt[i] * inv_sqrt[out.col_indices[k]];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// SupportPattern
// ---------------------------------------------------------------------------

/// Sparsity pattern without values: the shared storage layout for every
/// learned graph built on a union of edge sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPattern {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SupportPattern {
    pub fn from_csr(mat: &CsrMatrix) -> Self {
        Self {
            n_rows: mat.n_rows,
            n_cols: mat.n_cols,
            row_offsets: mat.row_offsets.clone(),
            col_indices: mat.col_indices.clone(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Storage index of position `(i, j)`, if present.
    pub fn position_of(&self, i: usize, j: usize) -> Option<usize> {
        let s = self.row_offsets[i];
        self.row(i).binary_search(&j).ok().map(|k| s + k)
    }

    /// `(row, col, storage index)` triples in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            (s..e).map(move |k| (i, self.col_indices[k], k))
        })
    }

    /// Row index of each stored entry, in storage order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            rows.extend(std::iter::repeat(i).take(self.row_offsets[i + 1] - self.row_offsets[i]));
        }
        rows
    }

    /// Assembles a CSR matrix from this pattern and per-entry values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<CsrMatrix> {
        if values.len() != self.nnz() {
            return Err(Error::DimensionMismatch(format!(
                "pattern has {} entries, got {} values",
                self.nnz(),
                values.len()
            )));
        }
        Ok(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values,
        })
    }

    /// Pattern with every diagonal position added (for self-loop
    /// augmentation of learned graphs).
    pub fn with_diagonal(&self) -> Result<SupportPattern> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        let mut row_offsets = vec![0usize; self.n_rows + 1];
        let mut col_indices = Vec::with_capacity(self.nnz() + self.n_rows);
        for i in 0..self.n_rows {
            let cols = self.row(i);
            let mut inserted = false;
            for &c in cols {
                if !inserted && c >= i {
                    if c != i {
                        col_indices.push(i);
                    }
                    inserted = true;
                }
                col_indices.push(c);
            }
            if !inserted {
                col_indices.push(i);
            }
            row_offsets[i + 1] = col_indices.len();
        }
        Ok(SupportPattern {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
        })
    }

    /// Values of `mat` scattered into this pattern's storage order; positions
    /// absent from `mat` become explicit zeros. Errors if `mat` stores an
    /// entry outside the pattern.
    pub fn align_values(&self, mat: &CsrMatrix) -> Result<Vec<f64>> {
        if (mat.n_rows, mat.n_cols) != (self.n_rows, self.n_cols) {
            return Err(Error::DimensionMismatch(format!(
                "pattern {}x{} vs matrix {}x{}",
                self.n_rows, self.n_cols, mat.n_rows, mat.n_cols
            )));
        }
        let mut out = vec![0.0; self.nnz()];
        for i in 0..mat.n_rows {
            let (cols, vals) = mat.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                match self.position_of(i, j) {
                    Some(k) => out[k] = v,
                    None => return Err(Error::SupportEscape { row: i, col: j }),
                }
            }
        }
        Ok(out)
    }

    pub fn shared(self) -> Arc<SupportPattern> {
        Arc::new(self)
    }
}

/// Set union of several support patterns.
pub fn union_of_patterns(patterns: &[&SupportPattern]) -> Result<SupportPattern> {
    let first = patterns
        .first()
        .ok_or_else(|| Error::InvalidArgument("union of empty pattern list".into()))?;
    let (n_rows, n_cols) = (first.n_rows, first.n_cols);
    for p in patterns {
        if (p.n_rows, p.n_cols) != (n_rows, n_cols) {
            return Err(Error::DimensionMismatch(format!(
                "pattern union shapes {}x{} vs {}x{}",
                n_rows, n_cols, p.n_rows, p.n_cols
            )));
        }
    }
    let mut row_offsets = vec![0usize; n_rows + 1];
    let mut col_indices = Vec::new();
    let mut scratch: Vec<usize> = Vec::new();
    for i in 0..n_rows {
        scratch.clear();
        for p in patterns {
            scratch.extend_from_slice(p.row(i));
        }
        scratch.sort_unstable();
        scratch.dedup();
        col_indices.extend_from_slice(&scratch);
        row_offsets[i + 1] = col_indices.len();
    }
    Ok(SupportPattern {
        n_rows,
        n_cols,
        row_offsets,
        col_indices,
    })
}

/// Set union of the nonzero positions of all inputs.
pub fn support_union(mats: &[&CsrMatrix]) -> Result<SupportPattern> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("support_union of empty list".into()))?;
    let (n_rows, n_cols) = first.shape();
    for m in mats {
        if m.shape() != (n_rows, n_cols) {
            return Err(Error::DimensionMismatch(format!(
                "support_union shapes {}x{} vs {}x{}",
                n_rows,
                n_cols,
                m.n_rows(),
                m.n_cols()
            )));
        }
    }
    let mut row_offsets = vec![0usize; n_rows + 1];
    let mut col_indices = Vec::new();
    let mut scratch: Vec<usize> = Vec::new();
    for i in 0..n_rows {
        scratch.clear();
        for m in mats {
            scratch.extend_from_slice(m.row(i).0);
        }
        scratch.sort_unstable();
        scratch.dedup();
        col_indices.extend_from_slice(&scratch);
        row_offsets[i + 1] = col_indices.len();
    }
    Ok(SupportPattern {
        n_rows,
        n_cols,
        row_offsets,
        col_indices,
    })
}

/// Linear combination `sum_k betas[k] * mats[k]` evaluated on `pattern`.
/// Positions on the pattern missing from every input are stored as explicit
/// zeros; an input entry outside the pattern is an error.
pub fn weighted_sum_on_support(
    pattern: &SupportPattern,
    mats: &[&CsrMatrix],
    betas: &[f64],
) -> Result<CsrMatrix> {
    if mats.len() != betas.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices vs {} betas",
            mats.len(),
            betas.len()
        )));
    }
    let mut values = vec![0.0; pattern.nnz()];
    for (m, &beta) in mats.iter().zip(betas) {
        let aligned = pattern.align_values(m)?;
        for (acc, v) in values.iter_mut().zip(aligned) {
            *acc += beta * v;
        }
    }
    pattern.with_values(values)
}
