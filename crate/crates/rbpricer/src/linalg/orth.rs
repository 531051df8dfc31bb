use nalgebra::DVector;

use super::Csr;

/// Appends `candidate` to an X-orthonormal basis by modified Gram–Schmidt
/// with one reorthogonalization pass. Returns `false` (and leaves the basis
/// unchanged) when the candidate is linearly dependent on the basis relative
/// to `drop_tol`, i.e. its post-projection X-norm falls below
/// `drop_tol · ‖candidate‖_X`.
pub fn orthonormal_append(
    basis: &mut Vec<DVector<f64>>,
    x: &Csr,
    candidate: &DVector<f64>,
    drop_tol: f64,
) -> bool {
    let pre = x.bilinear(candidate, candidate).max(0.0).sqrt();
    if !(pre > 0.0) {
        return false;
    }
    let mut v = candidate.clone();
    for _pass in 0..2 {
        let mut xv = x.matvec(&v);
        for b in basis.iter() {
            let c = xv.dot(b);
            if c != 0.0 {
                v.axpy(-c, b, 1.0);
                // Keep X·v in sync instead of recomputing the matvec.
                let xb = x.matvec(b);
                xv.axpy(-c, &xb, 1.0);
            }
        }
    }
    let post = x.bilinear(&v, &v).max(0.0).sqrt();
    if post < drop_tol * pre {
        return false;
    }
    v /= post;
    basis.push(v);
    true
}
