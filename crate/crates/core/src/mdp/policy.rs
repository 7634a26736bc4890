use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, QuadratureRule};

use super::gaussian::AffineTruncatedGaussian;
use super::StreamRng;

/// A conditional action density `pi(a | s)` that can also be sampled.
pub trait ActionDensity: Send + Sync + fmt::Debug {
    fn density(&self, a: &[f64], s: &[f64]) -> f64;
    fn sample(&self, s: &[f64], rng: &mut StreamRng) -> Vec<f64>;
    fn action_box(&self) -> &BoxDomain;
}

/// Uniform actions on the action box, independent of the state.
#[derive(Debug, Clone)]
pub struct UniformActions {
    pub action_box: BoxDomain,
}

impl ActionDensity for UniformActions {
    fn density(&self, a: &[f64], _s: &[f64]) -> f64 {
        if self.action_box.contains(a) {
            1.0 / self.action_box.volume()
        } else {
            0.0
        }
    }

    fn sample(&self, _s: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        (0..self.action_box.dim())
            .map(|k| rng.random_range(self.action_box.lo[k]..=self.action_box.hi[k]))
            .collect()
    }

    fn action_box(&self) -> &BoxDomain {
        &self.action_box
    }
}

/// Truncated Gaussian actions whose mean is affine in the state.
#[derive(Debug, Clone)]
pub struct GaussianActions(pub AffineTruncatedGaussian);

impl ActionDensity for GaussianActions {
    fn density(&self, a: &[f64], s: &[f64]) -> f64 {
        self.0.density(a, s)
    }

    fn sample(&self, s: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.0.sample(s, rng)
    }

    fn action_box(&self) -> &BoxDomain {
        &self.0.support
    }
}

pub type ActionMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A policy: either a proper density over the action box, or a point mass
/// at `location(s)`. Point masses bypass quadrature entirely.
#[derive(Clone)]
pub enum PolicyDensity {
    Density(Arc<dyn ActionDensity>),
    PointMass { location: ActionMap, action_box: BoxDomain },
}

/// How to integrate a function of the action against the policy at one
/// state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionIntegrand {
    /// Normalized weights, one per quadrature node.
    Weights(Vec<f64>),
    /// Evaluate at this single action.
    Point(Vec<f64>),
}

impl fmt::Debug for PolicyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyDensity::Density(d) => f.debug_tuple("Density").field(d).finish(),
            PolicyDensity::PointMass { action_box, .. } => f
                .debug_struct("PointMass")
                .field("action_box", action_box)
                .finish_non_exhaustive(),
        }
    }
}

/// Tolerance on `|int pi(a|s) da - 1|` accepted at construction.
const NORMALIZATION_TOL: f64 = 1e-6;

impl PolicyDensity {
    /// Wraps a density after checking by quadrature that it integrates to
    /// one at the corners and centre of `state_box`.
    pub fn from_density(density: Arc<dyn ActionDensity>, state_box: &BoxDomain) -> Result<Self> {
        let rule = QuadratureRule::composite_gauss(density.action_box(), 16, 8)?;
        let mut probes = state_box.grid(2);
        probes.push(state_box.grid(1).remove(0));
        for s in &probes {
            let mass = rule.integrate(|a| density.density(a, s));
            if (mass - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::input(format!(
                    "policy density integrates to {mass} at state {s:?}"
                )));
            }
        }
        Ok(PolicyDensity::Density(density))
    }

    pub fn uniform(action_box: BoxDomain, state_box: &BoxDomain) -> Result<Self> {
        Self::from_density(Arc::new(UniformActions { action_box }), state_box)
    }

    pub fn gaussian(g: AffineTruncatedGaussian, state_box: &BoxDomain) -> Result<Self> {
        if g.conditioning_dim() != state_box.dim() {
            return Err(Error::input("policy mean must be affine in the full state"));
        }
        Self::from_density(Arc::new(GaussianActions(g)), state_box)
    }

    pub fn point_mass(location: ActionMap, action_box: BoxDomain) -> Self {
        PolicyDensity::PointMass { location, action_box }
    }

    /// Always plays `a0`.
    pub fn constant_action(a0: Vec<f64>, action_box: BoxDomain) -> Self {
        Self::point_mass(Arc::new(move |_| a0.clone()), action_box)
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, PolicyDensity::PointMass { .. })
    }

    pub fn action_box(&self) -> &BoxDomain {
        match self {
            PolicyDensity::Density(d) => d.action_box(),
            PolicyDensity::PointMass { action_box, .. } => action_box,
        }
    }

    /// Density value, or `None` for point masses.
    pub fn density(&self, a: &[f64], s: &[f64]) -> Option<f64> {
        match self {
            PolicyDensity::Density(d) => Some(d.density(a, s)),
            PolicyDensity::PointMass { .. } => None,
        }
    }

    pub fn sample(&self, s: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        match self {
            PolicyDensity::Density(d) => d.sample(s, rng),
            PolicyDensity::PointMass { location, .. } => location(s),
        }
    }

    /// Quadrature weights `w_l pi(a_l|s)` renormalized to sum to one, or the
    /// point-mass location.
    pub fn action_integrand(&self, s: &[f64], rule: &QuadratureRule) -> Result<ActionIntegrand> {
        match self {
            PolicyDensity::PointMass { location, .. } => Ok(ActionIntegrand::Point(location(s))),
            PolicyDensity::Density(d) => {
                let mut w = Vec::with_capacity(rule.len());
                for (a, wl) in rule.nodes.iter().zip(&rule.weights) {
                    let p = d.density(a, s);
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::input(format!("policy density {p} at action {a:?}, state {s:?}")));
                    }
                    w.push(wl * p);
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return Err(Error::input(format!(
                        "policy puts no mass on the quadrature nodes at state {s:?}"
                    )));
                }
                w.iter_mut().for_each(|v| *v /= total);
                Ok(ActionIntegrand::Weights(w))
            }
        }
    }

    /// `int pi(a|s) f(a) da` by the given rule (exact for point masses).
    pub fn integrate(&self, s: &[f64], rule: &QuadratureRule, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
        Ok(match self.action_integrand(s, rule)? {
            ActionIntegrand::Point(a) => f(&a),
            ActionIntegrand::Weights(w) => rule
                .nodes
                .iter()
                .zip(&w)
                .filter(|(_, &wl)| wl != 0.0)
                .map(|(a, wl)| wl * f(a))
                .sum(),
        })
    }
}
