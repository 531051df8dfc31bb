use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Compressed-sparse-row matrix. Column indices are strictly increasing
/// within each row; structural zeros are kept so that matrices assembled
/// over the same mesh share one sparsity pattern and can be combined
/// entrywise.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    /// Triplet order is irrelevant; explicit zeros stay structural.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Csr { nrows, ncols, row_ptr, col_idx, vals }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `i` as (column, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.vals[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.vals[k] * xi;
            }
        }
        y
    }

    /// `xᵀ (self y)` without materializing the intermediate product.
    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut s = 0.0;
        for i in 0..self.nrows {
            let mut t = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t += self.vals[k] * y[self.col_idx[k]];
            }
            s += x[i] * t;
        }
        s
    }

    /// Submatrix on the given row/column subsets (index order preserved).
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Csr {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &i in rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = col_map[self.col_idx[k]];
                if j != usize::MAX {
                    col_idx.push(j);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr { nrows: rows.len(), ncols: cols.len(), row_ptr, col_idx, vals }
    }

    /// Entrywise linear combination `Σ cₖ Aₖ` over matrices with identical
    /// sparsity patterns (the assembly routines guarantee this).
    pub fn linear_combination(terms: &[(f64, &Csr)]) -> Result<Csr> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Solver("empty linear combination".into()))?
            .1;
        let mut out = first.clone();
        for v in out.vals.iter_mut() {
            *v *= terms[0].0;
        }
        for &(c, m) in &terms[1..] {
            if m.row_ptr != first.row_ptr || m.col_idx != first.col_idx {
                return Err(Error::Solver(
                    "sparsity patterns differ in linear combination".into(),
                ));
            }
            for (o, v) in out.vals.iter_mut().zip(m.vals.iter()) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// `(A + Aᵀ)/2`.
    pub fn symmetric_part(&self) -> Csr {
        assert_eq!(self.nrows, self.ncols);
        let mut trips = Vec::with_capacity(2 * self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = 0.5 * self.vals[k];
                trips.push((i, j, v));
                trips.push((j, i, v));
            }
        }
        Csr::from_triplets(self.nrows, self.ncols, &trips)
    }

    /// Structural bandwidths (kl, ku): max of i-j and j-i over stored entries.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn to_band(&self) -> BandMatrix {
        assert_eq!(self.nrows, self.ncols);
        let (kl, ku) = self.bandwidths();
        let mut band = BandMatrix::zeros(self.nrows, kl, ku);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                band.set(i, self.col_idx[k], self.vals[k]);
            }
        }
        band
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }

    /// Max absolute entrywise difference, treating missing entries as zero.
    pub fn max_abs_diff(&self, other: &Csr) -> f64 {
        let a = self.to_dense();
        let b = other.to_dense();
        (a - b).abs().max()
    }
}

use super::band::BandMatrix;

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csr {
        // [ 2 -1  0 ]
        // [-1  2 -1 ]
        // [ 0 -1  2 ]
        Csr::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        )
    }

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m = Csr::from_triplets(2, 2, &[(1, 1, 1.0), (0, 1, 2.0), (0, 1, 3.0), (0, 0, 4.0)]);
        let row0: Vec<_> = m.row(0).collect();
        assert_eq!(row0, vec![(0, 4.0), (1, 5.0)]);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = sample();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let y = m.matvec(&x);
        let yd = m.to_dense() * &x;
        assert!((y - yd).norm() < 1e-15);
        let z = m.matvec_transpose(&x);
        let zd = m.to_dense().transpose() * &x;
        assert!((z - zd).norm() < 1e-15);
    }

    #[test]
    fn restriction_preserves_order() {
        let m = sample();
        let s = m.restrict(&[0, 2], &[0, 2]);
        let d = s.to_dense();
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(1, 1)], 2.0);
    }

    #[test]
    fn symmetric_part_of_asymmetric() {
        let m = Csr::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 4.0)]);
        let s = m.symmetric_part().to_dense();
        assert_eq!(s[(0, 1)], 3.0);
        assert_eq!(s[(1, 0)], 3.0);
    }

    #[test]
    fn linear_combination_same_pattern() {
        let a = sample();
        let b = sample();
        let c = Csr::linear_combination(&[(2.0, &a), (-1.0, &b)]).unwrap();
        assert!(c.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn bandwidths_detected() {
        let m = Csr::from_triplets(4, 4, &[(0, 0, 1.0), (3, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(m.bandwidths(), (2, 1));
    }
}
