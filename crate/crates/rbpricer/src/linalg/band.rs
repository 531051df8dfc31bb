use nalgebra::DVector;

use crate::{Error, Result};

/// General band matrix with `kl` sub- and `ku` superdiagonals, stored
/// LAPACK-style in a `(2·kl + ku + 1) × n` column-major array so an in-place
/// LU with partial pivoting has room for fill.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ldab, ab: vec![0.0; ldab * n] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // Row i, column j sits at working row kl + ku + i - j of column j.
        self.ldab * j + (self.kl + self.ku + i) - j
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            j as isize - i as isize <= self.ku as isize
                && i as isize - j as isize <= self.kl as isize,
            "entry ({i},{j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place LU factorization with partial pivoting (the unblocked
    /// band algorithm; fill widens the upper band to `kl + ku`).
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let kuw = self.kl + self.ku; // upper bandwidth after fill
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j); // subdiagonal rows in this column
            // Pivot: largest magnitude among rows j..=j+km of column j.
            let mut p = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.ab[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            ipiv[j] = j + p;
            if best == 0.0 {
                return Err(Error::Solver(format!(
                    "banded LU: zero pivot at column {j}"
                )));
            }
            let jend = (j + kuw).min(n - 1);
            if p != 0 {
                for c in j..=jend {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.idx(j, j)];
            for r in 1..=km {
                let m = self.ab[self.idx(j + r, j)] / piv;
                let mi = self.idx(j + r, j);
                self.ab[mi] = m;
                if m != 0.0 {
                    for c in (j + 1)..=jend {
                        let src = self.ab[self.idx(j, c)];
                        let dst = self.idx(j + r, c);
                        self.ab[dst] -= m * src;
                    }
                }
            }
        }
        Ok(BandLu { n, kl, kuw, ldab: self.ldab, ab: self.ab, ipiv })
    }
}

/// Factored form produced by [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    kuw: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // Same layout as BandMatrix::idx: kuw = kl + ku.
        self.ldab * j + (self.kuw + i) - j
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // Forward: apply row swaps and the multipliers.
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap_rows(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=km {
                    b[j + r] -= self.ab[self.idx(j + r, j)] * bj;
                }
            }
        }
        // Back substitution with the widened upper triangle.
        for j in (0..n).rev() {
            let x = b[j] / self.ab[self.idx(j, j)];
            b[j] = x;
            if x != 0.0 {
                let lo = j.saturating_sub(self.kuw);
                for i in lo..j {
                    b[i] -= self.ab[self.idx(i, j)] * x;
                }
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> (BandMatrix, DMatrix<f64>) {
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j + kl >= i && i + ku >= j {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    // Strengthen the diagonal just enough to stay regular.
                    let v = if i == j { v + 3.0 } else { v };
                    band.set(i, j, v);
                    dense[(i, j)] = v;
                }
            }
        }
        (band, dense)
    }

    #[test]
    fn random_band_systems_match_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1usize, 0usize, 0usize), (5, 1, 1), (12, 3, 2), (40, 5, 9), (60, 1, 0)] {
            let (band, dense) = random_band(n, kl, ku, &mut rng);
            let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
            let lu = band.factor().unwrap();
            let x = lu.solve(&b);
            let xd = dense.clone().lu().solve(&b).unwrap();
            assert!(
                (&x - &xd).amax() < 1e-10,
                "n={n} kl={kl} ku={ku}: band/dense mismatch {}",
                (&x - &xd).amax()
            );
            assert!((dense * &x - &b).amax() < 1e-10);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [0 1; 1 0] needs a row swap.
        let mut band = BandMatrix::zeros(2, 1, 1);
        band.set(0, 1, 1.0);
        band.set(1, 0, 1.0);
        let lu = band.factor().unwrap();
        let x = lu.solve(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((x[0] - 3.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_an_error() {
        let mut band = BandMatrix::zeros(2, 0, 0);
        band.set(0, 0, 1.0);
        // diag (1, 0) is singular
        assert!(band.factor().is_err());
    }

    #[test]
    fn tridiagonal_poisson_solve() {
        // -u'' = 1 on a 1D grid: classic second-difference system.
        let n = 50;
        let mut band = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            band.set(i, i, 2.0);
            if i > 0 {
                band.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                band.set(i, i + 1, -1.0);
            }
        }
        let lu = band.factor().unwrap();
        let x = lu.solve(&DVector::from_element(n, 1.0));
        // Exact solution of the discrete system: x_i = (i+1)(n-i)/2.
        for i in 0..n {
            let exact = 0.5 * ((i + 1) as f64) * ((n - i) as f64);
            assert!((x[i] - exact).abs() < 1e-9 * exact);
        }
    }
}
