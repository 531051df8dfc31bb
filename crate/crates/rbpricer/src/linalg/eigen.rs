use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Options for the iterative eigenvalue routines.
#[derive(Debug, Clone, Copy)]
pub struct EigenOpts {
    /// Relative residual tolerance: stop when ‖Tx − ρx‖_B ≤ tol·|ρ|.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed for the (deterministic) start vector.
    pub seed: u64,
}

impl Default for EigenOpts {
    fn default() -> Self {
        EigenOpts { tol: 1e-8, max_iter: 100_000, seed: 0x00_5eed }
    }
}

fn start_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Power iteration for the largest eigenvalue of an operator that is
/// self-adjoint with respect to `inner`. Returns (λ_max, eigenvector).
pub fn power_max(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    inner: impl Fn(&DVector<f64>, &DVector<f64>) -> f64,
    n: usize,
    opts: &EigenOpts,
) -> Result<(f64, DVector<f64>)> {
    let mut x = start_vector(n, opts.seed);
    let nx = inner(&x, &x).sqrt();
    if !(nx > 0.0) {
        return Err(Error::Solver("power iteration: degenerate start".into()));
    }
    x /= nx;
    let mut rho = f64::NAN;
    for _ in 0..opts.max_iter {
        let y = apply(&x);
        rho = inner(&x, &y);
        let ny = inner(&y, &y).sqrt();
        if !(ny > 0.0) {
            return Err(Error::Solver(
                "power iteration: iterate vanished (operator singular on start vector)".into(),
            ));
        }
        // Residual-based stopping: for a B-self-adjoint operator the
        // Rayleigh quotient error is of the order of the residual norm
        // squared over the spectral gap, so this is conservative.
        let resid = &y - &x * rho;
        let rnorm = inner(&resid, &resid).max(0.0).sqrt();
        x = y / ny;
        if rnorm <= opts.tol * rho.abs().max(f64::MIN_POSITIVE) {
            return Ok((rho, x));
        }
    }
    Err(Error::Solver(format!(
        "power iteration: no convergence in {} iterations (last λ = {rho:.6e})",
        opts.max_iter
    )))
}

/// Smallest eigenvalue of a generalized symmetric problem `A x = λ B x`
/// via inverse power iteration on `A⁻¹B` (self-adjoint in the B-inner
/// product). `solve_a` applies `A⁻¹`, `apply_b` applies `B`.
pub fn inverse_power_smallest(
    solve_a: impl Fn(&DVector<f64>) -> DVector<f64>,
    apply_b: impl Fn(&DVector<f64>) -> DVector<f64>,
    n: usize,
    opts: &EigenOpts,
) -> Result<(f64, DVector<f64>)> {
    let inner = |u: &DVector<f64>, v: &DVector<f64>| u.dot(&apply_b(v));
    let apply = |v: &DVector<f64>| solve_a(&apply_b(v));
    let (rho, x) = power_max(apply, inner, n, opts)?;
    if !(rho.abs() > 0.0) {
        return Err(Error::Solver("inverse power iteration: zero Rayleigh quotient".into()));
    }
    Ok((1.0 / rho, x))
}

/// All eigenvalues of the dense generalized symmetric problem
/// `A x = λ B x` with `B` symmetric positive definite, sorted ascending.
/// Reduction via the Cholesky factor of `B`.
pub fn gen_eig_sym_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    assert_eq!(a.nrows(), a.ncols());
    assert_eq!(b.nrows(), b.ncols());
    assert_eq!(a.nrows(), b.nrows());
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solver("generalized eigensolve: B not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let mut c = a.clone();
    l.solve_lower_triangular_mut(&mut c);
    c.transpose_mut();
    l.solve_lower_triangular_mut(&mut c);
    // Symmetrize against roundoff before the symmetric eigensolver.
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}
