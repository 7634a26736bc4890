//! Synthetic continuous MDPs, batch data generation and ground-truth
//! Q-functions.

mod dataset;
mod discrete;
mod gaussian;
mod model;
mod oracle;
mod policy;
pub mod recipes;
mod target_fn;

pub use dataset::{sample_trajectories, Dataset, Transition};
pub use discrete::{DiscreteModel, DEFAULT_STATIONARY_TOL};
pub use gaussian::AffineTruncatedGaussian;
pub use model::{
    designed_q_mdp, ConstantReward, DesignedReward, FnReward, GaussianKernel, MdpSpec, RewardFn, RewardModel,
    TransitionKernel, NOISE_CLIP_SDS,
};
pub use oracle::{apply_t, fixed_point_oracle, oracle_value, InitialDist, InterpOrder, OracleQ, Provenance};
pub use policy::{ActionDensity, ActionIntegrand, ActionMap, GaussianActions, PolicyDensity, UniformActions};
pub use target_fn::{TargetFn, BENCHMARK_KINK_A, BENCHMARK_KINK_S};

pub use model::concat;
pub(crate) use oracle::transition_weights;

/// Random generator behind every [`crate::numerics::SeededStream`].
pub type StreamRng = rand_chacha::ChaCha8Rng;
