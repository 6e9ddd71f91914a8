//! Compressed-row sparse matrices.

use crate::error::{FdError, Result};

/// CSR matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates
    /// in input order so results do not depend on thread scheduling upstream.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(triplets.iter().all(|&(r, c, _)| r < nrows && c < ncols));
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Stored entry, or `None` when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[r.start + k])
    }

    /// Entry value with absent entries read as zero.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `Aᵀ x`
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(i, j, v)| (j, i, v)).collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.at(i, i)).collect()
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.at(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Symmetric permutation `P A Pᵀ` with `perm[old] = new`.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.nrows,
            self.ncols,
            self.triplets()
                .map(|(i, j, v)| (row_perm[i], col_perm[j], v))
                .collect(),
        )
    }

    /// Places blocks on a grid; `blocks[r][c]` must match row and column
    /// heights of the grid when present.
    pub fn block(blocks: &[Vec<Option<&SparseMatrix>>], row_sizes: &[usize], col_sizes: &[usize]) -> Result<SparseMatrix> {
        let row_off: Vec<usize> = offsets(row_sizes);
        let col_off: Vec<usize> = offsets(col_sizes);
        let mut trip = Vec::new();
        for (r, row) in blocks.iter().enumerate() {
            for (c, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    if b.nrows != row_sizes[r] || b.ncols != col_sizes[c] {
                        return Err(FdError::DimensionMismatch(format!(
                            "block ({r}, {c}) is {}x{}, expected {}x{}",
                            b.nrows, b.ncols, row_sizes[r], col_sizes[c]
                        )));
                    }
                    trip.extend(b.triplets().map(|(i, j, v)| (i + row_off[r], j + col_off[c], v)));
                }
            }
        }
        Ok(SparseMatrix::from_triplets(
            *row_off.last().unwrap(),
            *col_off.last().unwrap(),
            trip,
        ))
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(sizes.len() + 1);
    off.push(0);
    for s in sizes {
        off.push(off.last().unwrap() + s);
    }
    off
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}
