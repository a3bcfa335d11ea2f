//! Numeric substrate: seeded splittable RNG streams, stable exponential
//! reductions, Bessel-function ratios, and small dense linear algebra.
//!
//! All numerics are f64. Matrices are `ndarray` arrays in standard row-major
//! layout; tokens are stored as columns of an n x L context matrix.

mod bessel;
mod linalg;
mod rng;
mod stable;

pub use bessel::bessel_ratio;
pub use linalg::{
    condition_number, determinant, ensure_finite_1d, ensure_finite_2d, frobenius, invert,
    max_abs_diff_1d, max_abs_diff_2d, random_orthogonal, random_orthonormal_basis, spectral_norm,
    sq_dist, sym_eigvals, sym_op_norm,
};
pub use rng::{normal_matrix, normal_vector, shuffle, RngStream, StreamRng};
pub use stable::{kahan_mean, log_sum_exp, mean_and_stderr, softmax_stable, KahanSum};
