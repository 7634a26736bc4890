//! Sieve two-stage least squares for the Q-function.
//!
//! The model is `E[R - (Q(S, A) - gamma V(S')) | S, A] = 0` with `(S, A)` as
//! instruments, so `Q = psi^J' c` is fitted by projecting onto an instrument
//! basis `b^K` and solving least squares on the projection.

mod fit;
mod select;
mod system;
#[cfg(test)]
mod tests;

pub use fit::{
    bellman_residual, bellman_residual_norms, bootstrap_value_se, fit_2sls, fit_moments, plugin_value, predict_q,
    predict_q_deriv, projected_residual, value_functional, FitDiagnostics, ResidualNorms, SieveFit,
};
pub use select::{
    balanced_counts, choose_j, j_raw, select_multiplier, JChoice, JNorm, MultiplierScore, Selection, SieveDesign,
};
pub use system::{
    assemble, check_bases, dataset_moments, trajectory_moments, AssembledSystem, Moments, SieveSetup, DEFAULT_K_RATIO,
};
