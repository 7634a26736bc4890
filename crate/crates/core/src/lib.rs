//! Sieve two-stage least squares (2SLS) estimation of Q-functions for
//! infinite-horizon off-policy evaluation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: pseudo-inverses, eigenvalue extremes, Gauss–Legendre
//!   rules and seeded random streams.
//! - [`basis`]: tensor-product B-spline, cosine and Legendre sieves with
//!   derivatives and policy-integrated rows.
//! - [`mdp`]: synthetic continuous MDPs, batch data generation and two
//!   independent ground-truth routes for `Q^π`.
//! - [`npiv`]: assembly of the sieve matrices, the 2SLS solve, predictions,
//!   Bellman residuals and the plug-in policy value.
//! - [`diagnostics`]: ill-posedness quantities and well-posedness checks.
//! - [`harness`]: convergence-rate studies and the structured config format.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod io;
pub mod mdp;
pub mod npiv;
pub mod numerics;

pub use basis::{BasisSpec, Family, MultiIndex};
pub use error::{Error, Result};
pub use mdp::{Dataset, MdpSpec, OracleQ, PolicyDensity};
pub use npiv::{AssembledSystem, SieveFit};
pub use numerics::{BoxDomain, Matrix, QuadratureRule, SeededStream};
