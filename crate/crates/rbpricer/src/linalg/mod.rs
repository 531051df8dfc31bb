//! Sparse, banded and iterative linear algebra for the detailed level.
//!
//! The detailed discretizations in this crate are 1D interval meshes and
//! tensor-grid triangulations, so every system matrix is banded under the
//! natural node numbering. A compressed-sparse-row type covers assembly and
//! matrix-vector products; factorization goes through a classic banded LU
//! with partial pivoting. Reduced-scale (dense) work uses `nalgebra`.

mod band;
mod csr;
mod eigen;
mod lcp;
mod orth;

pub use band::{BandLu, BandMatrix};
pub use csr::Csr;
pub use eigen::{
    gen_eig_sym_dense, inverse_power_smallest, power_max, EigenOpts,
};
pub use lcp::lemke;
pub use orth::orthonormal_append;
