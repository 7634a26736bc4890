use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, QuadratureRule};

use super::gaussian::AffineTruncatedGaussian;
use super::policy::PolicyDensity;
use super::target_fn::TargetFn;
use super::StreamRng;

/// Transition kernel with an evaluable density `q(s' | s, a)`.
pub trait TransitionKernel: Send + Sync + fmt::Debug {
    fn density(&self, s_next: &[f64], s: &[f64], a: &[f64]) -> f64;
    fn sample(&self, s: &[f64], a: &[f64], rng: &mut StreamRng) -> Vec<f64>;
}

/// `s' ~ TN(c + A s + B a, diag(sd^2))` truncated to the state box: an
/// AR(1)-style kernel whose noise keeps the density bounded away from zero.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    inner: AffineTruncatedGaussian,
    state_dim: usize,
}

impl GaussianKernel {
    /// `slopes[k]` acts on the concatenation `(s, a)`.
    pub fn new(
        intercept: Vec<f64>,
        slopes: Vec<Vec<f64>>,
        sd: Vec<f64>,
        state_box: BoxDomain,
        action_dim: usize,
    ) -> Result<Self> {
        let state_dim = state_box.dim();
        let inner = AffineTruncatedGaussian::new(intercept, slopes, sd, state_box)?;
        if inner.conditioning_dim() != state_dim + action_dim {
            return Err(Error::input(
                "transition slopes must act on the concatenated (state, action) vector",
            ));
        }
        Ok(GaussianKernel { inner, state_dim })
    }

    pub fn mean(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        self.inner.mean(&concat(s, a))
    }
}

impl TransitionKernel for GaussianKernel {
    fn density(&self, s_next: &[f64], s: &[f64], a: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.state_dim);
        self.inner.density(s_next, &concat(s, a))
    }

    fn sample(&self, s: &[f64], a: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.inner.sample(&concat(s, a), rng)
    }
}

/// `(s, a)` as one joint point.
pub fn concat(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

/// Reward rule `R = mean(s, a, s') + noise` with `E[noise | s, a, s'] = 0`.
pub trait RewardModel: Send + Sync + fmt::Debug {
    /// The deterministic part `R(s, a, s')`.
    fn mean(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64;
    fn sample(&self, s: &[f64], a: &[f64], s_next: &[f64], rng: &mut StreamRng) -> f64;
    /// `R_max`: a bound on `|R|` that holds surely.
    fn bound(&self) -> f64;
    /// True when `sample` always equals `mean`.
    fn is_deterministic(&self) -> bool;

    /// Per-next-state quantities that [`RewardModel::mean_with`] can reuse
    /// across many `(s, a)` pairs sharing the same next-state nodes.
    fn precompute(&self, _next_states: &[Vec<f64>]) -> Vec<f64> {
        Vec::new()
    }

    /// `mean(s, a, next_states[m])`, possibly using `pre` from
    /// [`RewardModel::precompute`] on the same `next_states`.
    fn mean_with(&self, s: &[f64], a: &[f64], next_states: &[Vec<f64>], _pre: &[f64], m: usize) -> f64 {
        self.mean(s, a, &next_states[m])
    }
}

#[derive(Debug, Clone)]
pub struct ConstantReward(pub f64);

impl RewardModel for ConstantReward {
    fn mean(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
        self.0
    }
    fn sample(&self, _: &[f64], _: &[f64], _: &[f64], _: &mut StreamRng) -> f64 {
        self.0
    }
    fn bound(&self) -> f64 {
        self.0.abs()
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

pub type RewardFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Deterministic reward given by a closure with a caller-supplied bound.
#[derive(Clone)]
pub struct FnReward {
    pub f: RewardFn,
    pub bound: f64,
}

impl fmt::Debug for FnReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnReward")
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl RewardModel for FnReward {
    fn mean(&self, s: &[f64], a: &[f64], sn: &[f64]) -> f64 {
        (self.f)(s, a, sn)
    }
    fn sample(&self, s: &[f64], a: &[f64], sn: &[f64], _: &mut StreamRng) -> f64 {
        (self.f)(s, a, sn)
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Noise is clipped symmetrically at this many standard deviations.
pub const NOISE_CLIP_SDS: f64 = 4.0;

/// Reward that makes a chosen function the exact Q-function of the target
/// policy: `R = Q*(s,a) - gamma int pi(a'|s') Q*(s',a') da' + eps`.
#[derive(Debug, Clone)]
pub struct DesignedReward {
    pub q_star: TargetFn,
    pub target: PolicyDensity,
    pub action_rule: QuadratureRule,
    pub gamma: f64,
    pub noise_sd: f64,
    bound: f64,
}

impl DesignedReward {
    /// `int pi(a'|s') Q*(s', a') da'` by the stored action rule.
    pub fn next_value(&self, s_next: &[f64]) -> f64 {
        self.target
            .integrate(s_next, &self.action_rule, |a| self.q_star.value(&concat(s_next, a)))
            .expect("target policy validated at construction")
    }
}

impl RewardModel for DesignedReward {
    fn mean(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> f64 {
        self.q_star.value(&concat(s, a)) - self.gamma * self.next_value(s_next)
    }

    fn sample(&self, s: &[f64], a: &[f64], s_next: &[f64], rng: &mut StreamRng) -> f64 {
        let mean = self.mean(s, a, s_next);
        if self.noise_sd == 0.0 {
            return mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        mean + self.noise_sd * z.clamp(-NOISE_CLIP_SDS, NOISE_CLIP_SDS)
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn is_deterministic(&self) -> bool {
        self.noise_sd == 0.0
    }

    fn precompute(&self, next_states: &[Vec<f64>]) -> Vec<f64> {
        next_states.iter().map(|sn| self.next_value(sn)).collect()
    }

    fn mean_with(&self, s: &[f64], a: &[f64], _: &[Vec<f64>], pre: &[f64], m: usize) -> f64 {
        self.q_star.value(&concat(s, a)) - self.gamma * pre[m]
    }
}

/// Generative model of a continuous MDP on a state box and action box.
#[derive(Debug, Clone)]
pub struct MdpSpec {
    pub state_box: BoxDomain,
    pub action_box: BoxDomain,
    pub transition: Arc<dyn TransitionKernel>,
    pub reward: Arc<dyn RewardModel>,
    pub gamma: f64,
    /// Present when the reward was built by [`designed_q_mdp`].
    pub designed: Option<Arc<DesignedReward>>,
}

impl MdpSpec {
    pub fn new(
        state_box: BoxDomain,
        action_box: BoxDomain,
        transition: Arc<dyn TransitionKernel>,
        reward: Arc<dyn RewardModel>,
        gamma: f64,
    ) -> Result<Self> {
        state_box.validate()?;
        action_box.validate()?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::input(format!("discount must lie in [0, 1), got {gamma}")));
        }
        if !reward.bound().is_finite() {
            return Err(Error::input("reward bound must be finite"));
        }
        Ok(MdpSpec {
            state_box,
            action_box,
            transition,
            reward,
            gamma,
            designed: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    /// The joint state-action box.
    pub fn joint_box(&self) -> BoxDomain {
        self.state_box.product(&self.action_box)
    }

    /// Same dynamics with a different reward rule.
    pub fn with_reward(&self, reward: Arc<dyn RewardModel>) -> MdpSpec {
        MdpSpec {
            reward,
            designed: None,
            ..self.clone()
        }
    }
}

/// Builds an MDP whose Q-function under `target` equals `q_star`.
///
/// The reward integral over next actions uses `action_rule`; reward noise is
/// a Gaussian with `noise_sd` clipped at `NOISE_CLIP_SDS` deviations, which
/// keeps it bounded and exactly mean zero.
#[allow(clippy::too_many_arguments)]
pub fn designed_q_mdp(
    q_star: TargetFn,
    state_box: BoxDomain,
    action_box: BoxDomain,
    transition: Arc<dyn TransitionKernel>,
    target: PolicyDensity,
    action_rule: QuadratureRule,
    gamma: f64,
    noise_sd: f64,
) -> Result<MdpSpec> {
    let joint = state_box.product(&action_box);
    q_star.validate(joint.dim())?;
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::input(format!(
            "noise sd must be finite and >= 0, got {noise_sd}"
        )));
    }
    let sup = q_star.sup_bound(&joint);
    if !sup.is_finite() {
        return Err(Error::input("designed Q-function is unbounded on the domain"));
    }
    let reward = DesignedReward {
        q_star,
        target,
        action_rule,
        gamma,
        noise_sd,
        bound: sup * (1.0 + gamma) + NOISE_CLIP_SDS * noise_sd,
    };
    let reward = Arc::new(reward);
    let mut mdp = MdpSpec::new(state_box, action_box, transition, reward.clone(), gamma)?;
    mdp.designed = Some(reward);
    Ok(mdp)
}
