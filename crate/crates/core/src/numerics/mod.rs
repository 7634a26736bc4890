//! Deterministic linear-algebra, quadrature and random-stream primitives.

mod linalg;
mod quadrature;
mod rng;

pub use linalg::{
    condition_number, ensure_finite, min_singular, numerical_rank, pinv_truncated, pinv_with_rank, sym_eig_extremes,
    sym_inv_sqrt, symmetrize, DEFAULT_RTOL,
};
pub use quadrature::{gauss_legendre, tensor_gauss_rule, BoxDomain, QuadratureRule};
pub use rng::SeededStream;

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
