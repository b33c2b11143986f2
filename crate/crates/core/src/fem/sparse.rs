//! Compressed-row sparse operators and element-wise assembly patterns.

use crate::error::{Error, Result};

/// A sparse matrix in compressed row layout. Column indices are sorted
/// within each row and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub symmetric: bool,
}

impl SparseOperator {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut op = Self::identity(diag.len());
        op.values.copy_from_slice(diag);
        op
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "operand length");
        assert_eq!(y.len(), self.nrows, "output length");
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// xᵀ A y
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for (r, xr) in x.iter().enumerate() {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * y[self.col_idx[k]];
            }
            acc += xr * row;
        }
        acc
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// max |A_ij - A_ji| / max |A_ij|
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// `alpha * self + beta * other`; both operands must share a pattern.
    pub fn linear_combination(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return self.add_general(alpha, other, beta);
        }
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().zip(&other.values) {
            *o = alpha * *o + beta * b;
        }
        out.symmetric = self.symmetric && other.symmetric;
        Ok(out)
    }

    fn add_general(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            trip.extend(self.row(r).map(|(c, v)| (r, c, alpha * v)));
            trip.extend(other.row(r).map(|(c, v)| (r, c, beta * v)));
        }
        let mut out = Self::from_triplets(self.nrows, self.ncols, &trip)?;
        out.symmetric = self.symmetric && other.symmetric;
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Replaces the rows and columns listed in `mask` by identity rows and
    /// columns.
    pub fn pin_dofs(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.nrows);
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if mask[r] || mask[c] {
                    self.values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// The block with rows in `rows` and columns in `cols`, re-indexed from 0.
    pub fn sub_block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> SparseOperator {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in rows.clone() {
            for (c, v) in self.row(r) {
                if cols.contains(&c) {
                    col_idx.push(c - cols.start);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator {
            nrows: rows.len(),
            ncols: cols.len(),
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        }
    }

    /// Adds `alpha · other` into the block starting at `(row_off, col_off)`.
    /// Every entry of `other` must already be present in the pattern.
    pub fn add_block(&mut self, other: &SparseOperator, row_off: usize, col_off: usize, alpha: f64) -> Result<()> {
        if row_off + other.nrows > self.nrows || col_off + other.ncols > self.ncols {
            return Err(Error::DimensionMismatch("block does not fit".into()));
        }
        for r in 0..other.nrows {
            let gr = r + row_off;
            let range = self.row_ptr[gr]..self.row_ptr[gr + 1];
            for (c, v) in other.row(r) {
                let k = self.col_idx[range.clone()]
                    .binary_search(&(c + col_off))
                    .map_err(|_| Error::DimensionMismatch(format!("entry ({gr}, {}) outside the pattern", c + col_off)))?;
                self.values[range.start + k] += alpha * v;
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        out
    }
}

/// Sparsity pattern of an element-assembled operator, with a precomputed
/// scatter map from each element's local matrix into the CSR value array.
#[derive(Debug, Clone)]
pub struct AssemblyPattern {
    pub n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    local_sizes: Vec<usize>,
    offsets: Vec<usize>,
    positions: Vec<usize>,
}

impl AssemblyPattern {
    /// `elements[e]` lists the global dofs coupled by element `e`.
    pub fn new(n: usize, elements: &[Vec<usize>]) -> Self {
        let mut trip = Vec::new();
        for dofs in elements {
            for &r in dofs {
                for &c in dofs {
                    trip.push((r, c, 0.0));
                }
            }
        }
        let op = SparseOperator::from_triplets(n, n, &trip).expect("element dofs within range");
        let mut positions = Vec::new();
        let mut offsets = Vec::with_capacity(elements.len() + 1);
        let mut local_sizes = Vec::with_capacity(elements.len());
        offsets.push(0);
        for dofs in elements {
            for &r in dofs {
                let range = op.row_ptr[r]..op.row_ptr[r + 1];
                for &c in dofs {
                    let k = op.col_idx[range.clone()].binary_search(&c).expect("entry in pattern");
                    positions.push(range.start + k);
                }
            }
            local_sizes.push(dofs.len());
            offsets.push(positions.len());
        }
        Self {
            n,
            row_ptr: op.row_ptr,
            col_idx: op.col_idx,
            local_sizes,
            offsets,
            positions,
        }
    }

    pub fn zeroed(&self) -> SparseOperator {
        SparseOperator {
            nrows: self.n,
            ncols: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: vec![0.0; self.col_idx.len()],
            symmetric: false,
        }
    }

    /// Adds a row-major local matrix for element `e`.
    #[inline]
    pub fn add_local(&self, op: &mut SparseOperator, e: usize, local: &[f64]) {
        let n = self.local_sizes[e];
        debug_assert_eq!(local.len(), n * n);
        let pos = &self.positions[self.offsets[e]..self.offsets[e + 1]];
        for (p, v) in pos.iter().zip(local) {
            op.values[*p] += v;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
