//! Ready-made MDPs used by the rate studies, the CLI and the tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{BoxDomain, QuadratureRule};

use super::gaussian::AffineTruncatedGaussian;
use super::model::{designed_q_mdp, GaussianKernel, MdpSpec};
use super::policy::PolicyDensity;
use super::target_fn::TargetFn;

/// Panels and Gauss nodes per panel of the default one-dimensional rules.
pub const DEFAULT_PANELS: usize = 8;
pub const DEFAULT_NODES_PER_PANEL: usize = 6;

/// Named designed-Q recipes on the unit square (one state, one action).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeId {
    /// `Q*` with two truncated-square kinks: Hölder smoothness exactly 2.
    Benchmark,
    /// `Q*(s, a) = sin(pi s) cos(pi a / 2)`.
    SinCos,
}

impl RecipeId {
    pub fn q_star(&self) -> TargetFn {
        match self {
            RecipeId::Benchmark => TargetFn::Benchmark,
            RecipeId::SinCos => TargetFn::SinCos,
        }
    }
}

/// A designed-Q MDP together with its policies and default rules.
#[derive(Debug, Clone)]
pub struct Lab {
    pub mdp: MdpSpec,
    pub behavior: PolicyDensity,
    pub target: PolicyDensity,
    pub q_star: TargetFn,
    /// Rule over the action box for every policy integral.
    pub action_rule: QuadratureRule,
    /// Rule over the state box for next-state and initial-state integrals.
    pub state_rule: QuadratureRule,
}

/// Transition `s' ~ TN(0.25 + 0.3 s + 0.2 a, 0.3^2)` on `[0, 1]`.
pub fn unit_kernel() -> Result<GaussianKernel> {
    GaussianKernel::new(vec![0.25], vec![vec![0.3, 0.2]], vec![0.3], BoxDomain::unit(1), 1)
}

/// Target policy `a ~ TN(0.2 + 0.6 s, 0.2^2)` on `[0, 1]`.
pub fn unit_target() -> Result<PolicyDensity> {
    let g = AffineTruncatedGaussian::new(vec![0.2], vec![vec![0.6]], vec![0.2], BoxDomain::unit(1))?;
    PolicyDensity::gaussian(g, &BoxDomain::unit(1))
}

/// Uniform behavior policy on `[0, 1]`.
pub fn unit_behavior() -> Result<PolicyDensity> {
    PolicyDensity::uniform(BoxDomain::unit(1), &BoxDomain::unit(1))
}

pub fn default_rule(domain: &BoxDomain) -> Result<QuadratureRule> {
    QuadratureRule::composite_gauss(domain, DEFAULT_PANELS, DEFAULT_NODES_PER_PANEL)
}

/// The unit-square lab with the given `Q*`.
pub fn unit_lab(q_star: TargetFn, gamma: f64, noise_sd: f64) -> Result<Lab> {
    let state_box = BoxDomain::unit(1);
    let action_box = BoxDomain::unit(1);
    let action_rule = default_rule(&action_box)?;
    let state_rule = default_rule(&state_box)?;
    let target = unit_target()?;
    let mdp = designed_q_mdp(
        q_star.clone(),
        state_box,
        action_box,
        Arc::new(unit_kernel()?),
        target.clone(),
        action_rule.clone(),
        gamma,
        noise_sd,
    )?;
    Ok(Lab {
        mdp,
        behavior: unit_behavior()?,
        target,
        q_star,
        action_rule,
        state_rule,
    })
}

/// Lab for a named recipe.
pub fn build(recipe: RecipeId, gamma: f64, noise_sd: f64) -> Result<Lab> {
    unit_lab(recipe.q_star(), gamma, noise_sd)
}
