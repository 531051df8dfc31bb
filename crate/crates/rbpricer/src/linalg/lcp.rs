//! Dense linear complementarity: Lemke's complementary pivoting.
//!
//! Solves LCP(M, q): find z ≥ 0 with w = Mz + q ≥ 0 and wᵀz = 0. The
//! reduced American time step produces exactly this problem with
//! M = 𝓑ᵀ𝓐⁻¹𝓑, which has a positive-semidefinite symmetric part and is
//! therefore copositive-plus; for that class Lemke's method with a
//! lexicographic ratio test terminates in finitely many pivots, either
//! with a solution or with a secondary ray certifying infeasibility
//! (which cannot occur for a solvable variational inequality except
//! through roundoff). Complementarity holds by construction — at every
//! pivot the basis contains exactly one variable of each pair (w_i, z_i),
//! so the returned solution has z_i = 0 exactly on its non-basic
//! components.
//!
//! The active-set iteration of the online solver remains the fast path;
//! this solver is its fallback for degenerate steps where near-parallel
//! dual directions make the active-set map cycle.

use nalgebra::{DMatrix, DVector};

/// Solve LCP(M, q) by Lemke's algorithm. Returns `None` when the method
/// terminates on a secondary ray or exceeds `max_pivots`.
///
/// The tableau starts from I·w − M·z − e·z₀ = q with the covering vector
/// e = (1, …, 1); ties in the minimum-ratio test are broken
/// lexicographically against the inverse-basis block, which rules out
/// cycling regardless of degeneracy in the data.
pub fn lemke(m: &DMatrix<f64>, q: &DVector<f64>, max_pivots: usize) -> Option<DVector<f64>> {
    let n = q.len();
    assert_eq!(m.nrows(), n, "LCP matrix/vector dimension mismatch");
    assert_eq!(m.ncols(), n, "LCP matrix must be square");
    if n == 0 || q.min() >= 0.0 {
        return Some(DVector::zeros(n));
    }

    // Column layout: [w_0..w_{n-1} | z_0..z_{n-1} | z0 | rhs].
    let z0_col = 2 * n;
    let rhs_col = 2 * n + 1;
    let mut t = DMatrix::zeros(n, 2 * n + 2);
    for i in 0..n {
        t[(i, i)] = 1.0;
        t[(i, z0_col)] = -1.0;
        t[(i, rhs_col)] = q[i];
        for j in 0..n {
            t[(i, n + j)] = -m[(i, j)];
        }
    }
    let mut basis: Vec<usize> = (0..n).collect();

    // Initial pivot: z₀ enters; the row with the lexicographically
    // smallest (q_i, B⁻¹ row) leaves, making every rhs nonnegative.
    let mut r = 0usize;
    for i in 1..n {
        if lex_less(&t, i, r, 1.0, 1.0, n, rhs_col) {
            r = i;
        }
    }
    pivot(&mut t, r, z0_col);
    let mut entering = complement(basis[r], n);
    basis[r] = z0_col;

    for _ in 0..max_pivots {
        // Minimum-ratio test over rows with a positive pivot candidate.
        let col = entering;
        let mut dmax: f64 = 0.0;
        for i in 0..n {
            dmax = dmax.max(t[(i, col)].abs());
        }
        let tol = 1e-12 * (1.0 + dmax);
        let mut leave: Option<usize> = None;
        for i in 0..n {
            let d = t[(i, col)];
            if d <= tol {
                continue;
            }
            leave = match leave {
                None => Some(i),
                Some(l) => {
                    if lex_less(&t, i, l, d, t[(l, col)], n, rhs_col) {
                        Some(i)
                    } else {
                        Some(l)
                    }
                }
            };
        }
        let Some(r) = leave else {
            // Secondary ray: no basic variable blocks the entering one.
            return None;
        };
        let leaving = basis[r];
        pivot(&mut t, r, col);
        basis[r] = col;
        if leaving == z0_col {
            let mut z = DVector::zeros(n);
            for (i, &b) in basis.iter().enumerate() {
                if (n..2 * n).contains(&b) {
                    // The ratio test keeps the rhs nonnegative; clamp the
                    // −0.0 / rounding dust that pivoting can leave behind.
                    z[b - n] = t[(i, rhs_col)].max(0.0);
                }
            }
            return Some(z);
        }
        entering = complement(leaving, n);
    }
    None
}

fn complement(var: usize, n: usize) -> usize {
    if var < n {
        n + var
    } else {
        var - n
    }
}

/// Lexicographic comparison of the ratio rows i and j: compares
/// (rhs, B⁻¹ row)/d componentwise, deciding at the first strict
/// difference. The B⁻¹ rows are independent, so a decision is reached.
fn lex_less(
    t: &DMatrix<f64>,
    i: usize,
    j: usize,
    di: f64,
    dj: f64,
    n: usize,
    rhs_col: usize,
) -> bool {
    let cols = std::iter::once(rhs_col).chain(0..n);
    for c in cols {
        let a = t[(i, c)] / di;
        let b = t[(j, c)] / dj;
        if a < b {
            return true;
        }
        if a > b {
            return false;
        }
    }
    i < j
}

fn pivot(t: &mut DMatrix<f64>, r: usize, c: usize) {
    let piv = t[(r, c)];
    let ncols = t.ncols();
    for col in 0..ncols {
        t[(r, col)] /= piv;
    }
    for row in 0..t.nrows() {
        if row == r {
            continue;
        }
        let factor = t[(row, c)];
        if factor == 0.0 {
            continue;
        }
        for col in 0..ncols {
            t[(row, col)] -= factor * t[(r, col)];
        }
        t[(row, c)] = 0.0;
    }
    t[(r, c)] = 1.0;
}
