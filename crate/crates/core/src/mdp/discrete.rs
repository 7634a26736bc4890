use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, QuadratureRule};

use super::model::{concat, MdpSpec};
use super::policy::{ActionIntegrand, PolicyDensity};

/// Convergence threshold (L1 change) for the stationary power iteration.
pub const DEFAULT_STATIONARY_TOL: f64 = 1e-14;
const MAX_POWER_ITERS: usize = 100_000;

/// Finite-state approximation of an MDP on a product of quadrature nodes.
///
/// States are the nodes of a state rule, actions the nodes of an action
/// rule. Transition and policy probabilities are quadrature weights times
/// densities, renormalized per row, so the discrete chain is an exact Markov
/// chain. Densities are recovered as `mass / (w_state * w_action)`. All
/// inequalities that hold for the continuous model (Jensen, contraction,
/// coverage bounds) hold exactly for this chain, which makes it the
/// reference for norm checks.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub gamma: f64,
    pub state_nodes: Vec<Vec<f64>>,
    pub state_weights: Vec<f64>,
    pub action_nodes: Vec<Vec<f64>>,
    pub action_weights: Vec<f64>,
    /// Row `g = n * n_actions + l`: next-state probabilities from `(s_n, a_l)`.
    pub transition: Matrix,
    /// Row `n`: behavior action probabilities at `s_n`.
    pub behavior: Matrix,
    /// Row `n`: target action probabilities at `s_n`.
    pub target: Matrix,
    /// Stationary state distribution of the behavior chain.
    pub stationary: Vec<f64>,
    /// Stationary state-action mass, indexed by `g`.
    pub mass: Vec<f64>,
    /// Expected reward `E[R | s, a]` at every grid point.
    pub reward_mean: Vec<f64>,
    /// Smallest stationary state-action density.
    pub p_min: f64,
    /// Largest of the stationary density and every k-step target-policy
    /// push-forward density.
    pub p_max: f64,
}

impl DiscreteModel {
    pub fn new(
        mdp: &MdpSpec,
        behavior: &PolicyDensity,
        target: &PolicyDensity,
        state_rule: &QuadratureRule,
        action_rule: &QuadratureRule,
    ) -> Result<Self> {
        if state_rule.domain != mdp.state_box || action_rule.domain != mdp.action_box {
            return Err(Error::input(
                "discrete model rules must cover the MDP state and action boxes",
            ));
        }
        if behavior.is_point_mass() || target.is_point_mass() {
            return Err(Error::capability(
                "the discrete model needs policies with densities (coverage is undefined for point masses)",
            ));
        }
        let ns = state_rule.len();
        let na = action_rule.len();
        let policy_matrix = |p: &PolicyDensity| -> Result<Matrix> {
            let mut m = Matrix::zeros(ns, na);
            for (n, s) in state_rule.nodes.iter().enumerate() {
                match p.action_integrand(s, action_rule)? {
                    ActionIntegrand::Weights(w) => {
                        for (l, v) in w.into_iter().enumerate() {
                            m[(n, l)] = v;
                        }
                    }
                    ActionIntegrand::Point(_) => unreachable!("point masses rejected above"),
                }
            }
            Ok(m)
        };
        let behavior_m = policy_matrix(behavior)?;
        let target_m = policy_matrix(target)?;

        let rows: Vec<Vec<f64>> = (0..ns * na)
            .into_par_iter()
            .map(|g| {
                let (s, a) = (&state_rule.nodes[g / na], &action_rule.nodes[g % na]);
                let mut row: Vec<f64> = state_rule
                    .nodes
                    .iter()
                    .zip(&state_rule.weights)
                    .map(|(sn, w)| w * mdp.transition.density(sn, s, a))
                    .collect();
                let total: f64 = row.iter().sum();
                if !(total > 0.0 && total.is_finite()) {
                    return Err(Error::numerical(format!(
                        "transition density has no mass on the state nodes from ({s:?}, {a:?})"
                    )));
                }
                row.iter_mut().for_each(|v| *v /= total);
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let mut transition = Matrix::zeros(ns * na, ns);
        for (g, row) in rows.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                transition[(g, m)] = *v;
            }
        }

        let pre = mdp.reward.precompute(&state_rule.nodes);
        let reward_mean: Vec<f64> = (0..ns * na)
            .into_par_iter()
            .map(|g| {
                let (s, a) = (&state_rule.nodes[g / na], &action_rule.nodes[g % na]);
                (0..ns)
                    .filter(|&m| transition[(g, m)] != 0.0)
                    .map(|m| transition[(g, m)] * mdp.reward.mean_with(s, a, &state_rule.nodes, &pre, m))
                    .sum()
            })
            .collect();

        let mut model = DiscreteModel {
            gamma: mdp.gamma,
            state_nodes: state_rule.nodes.clone(),
            state_weights: state_rule.weights.clone(),
            action_nodes: action_rule.nodes.clone(),
            action_weights: action_rule.weights.clone(),
            transition,
            behavior: behavior_m,
            target: target_m,
            stationary: Vec::new(),
            mass: Vec::new(),
            reward_mean,
            p_min: 0.0,
            p_max: 0.0,
        };
        model.stationary = model.stationary_distribution()?;
        model.mass = model.joint_mass(&model.stationary, &model.behavior);
        let density = model.densities(&model.mass);
        model.p_min = density.iter().cloned().fold(f64::INFINITY, f64::min);
        model.p_max = density
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .max(model.max_pushforward_density()?);
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.state_nodes.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(s, a)` for every grid index `g`.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let na = self.n_actions();
        (0..self.len())
            .map(|g| concat(&self.state_nodes[g / na], &self.action_nodes[g % na]))
            .collect()
    }

    /// Stationary state-action density at every grid point.
    pub fn stationary_density(&self) -> Vec<f64> {
        self.densities(&self.mass)
    }

    fn densities(&self, mass: &[f64]) -> Vec<f64> {
        let na = self.n_actions();
        mass.iter()
            .enumerate()
            .map(|(g, m)| m / (self.state_weights[g / na] * self.action_weights[g % na]))
            .collect()
    }

    fn joint_mass(&self, state_mass: &[f64], policy: &Matrix) -> Vec<f64> {
        let na = self.n_actions();
        (0..self.len())
            .map(|g| state_mass[g / na] * policy[(g / na, g % na)])
            .collect()
    }

    /// State marginal after one transition from a state-action mass.
    fn push(&self, joint: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.n_states()];
        for (g, &w) in joint.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (m, acc) in next.iter_mut().enumerate() {
                *acc += w * self.transition[(g, m)];
            }
        }
        next
    }

    fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let ns = self.n_states();
        let mut mu = vec![1.0 / ns as f64; ns];
        for _ in 0..MAX_POWER_ITERS {
            let next = self.push(&self.joint_mass(&mu, &self.behavior));
            let change: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
            mu = next;
            if change < DEFAULT_STATIONARY_TOL {
                return Ok(mu);
            }
        }
        Err(Error::numerical(
            "stationary distribution power iteration did not converge",
        ))
    }

    /// `sup_k max density` of the state-action law reached after `k`
    /// target-policy steps from the stationary behavior law.
    fn max_pushforward_density(&self) -> Result<f64> {
        let mut joint = self.mass.clone();
        let mut best: f64 = 0.0;
        for _ in 0..MAX_POWER_ITERS {
            let states = self.push(&joint);
            let next = self.joint_mass(&states, &self.target);
            best = best.max(self.densities(&next).into_iter().fold(0.0, f64::max));
            let change: f64 = next.iter().zip(&joint).map(|(a, b)| (a - b).abs()).sum();
            joint = next;
            if change < DEFAULT_STATIONARY_TOL {
                return Ok(best);
            }
        }
        Err(Error::numerical("target-policy push-forward did not converge"))
    }

    /// `V(s_m) = sum_l pi(a_l | s_m) q(s_m, a_l)` for grid values `q`.
    pub fn target_value(&self, q: &[f64]) -> Vec<f64> {
        let na = self.n_actions();
        (0..self.n_states())
            .map(|m| (0..na).map(|l| self.target[(m, l)] * q[m * na + l]).sum())
            .collect()
    }

    /// `(P^pi q)(s, a) = E[V(S') | s, a]`.
    pub fn p_pi(&self, q: &[f64]) -> Vec<f64> {
        let v = self.target_value(q);
        self.expect_next(&v)
    }

    /// `E[f(S') | s, a]` for a function of the next state given at nodes.
    pub fn expect_next(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|g| (0..self.n_states()).map(|m| self.transition[(g, m)] * f[m]).sum())
            .collect()
    }

    /// `h^pi(q)(s, a, s') = q(s, a) - gamma V(s')` as a `len x n_states` table.
    pub fn h_pi(&self, q: &[f64]) -> Matrix {
        let v = self.target_value(q);
        Matrix::from_fn(self.len(), self.n_states(), |g, m| q[g] - self.gamma * v[m])
    }

    /// `(T h)(s, a) = E[h(s, a, S') | s, a]` for a `len x n_states` table.
    pub fn apply_t(&self, h: &Matrix) -> Vec<f64> {
        (0..self.len())
            .map(|g| (0..self.n_states()).map(|m| self.transition[(g, m)] * h[(g, m)]).sum())
            .collect()
    }

    /// Bellman residual `rbar + gamma P^pi q - q` at every grid point.
    pub fn bellman_residual(&self, q: &[f64]) -> Vec<f64> {
        let pq = self.p_pi(q);
        (0..self.len())
            .map(|g| self.reward_mean[g] + self.gamma * pq[g] - q[g])
            .collect()
    }

    /// `L2` norm under the stationary state-action law.
    pub fn l2(&self, q: &[f64]) -> f64 {
        q.iter().zip(&self.mass).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
    }

    /// `L2` norm of a `(s, a, s')` table under stationary law times transition.
    pub fn l2_joint(&self, h: &Matrix) -> f64 {
        let mut acc = 0.0;
        for g in 0..self.len() {
            for m in 0..self.n_states() {
                acc += self.mass[g] * self.transition[(g, m)] * h[(g, m)] * h[(g, m)];
            }
        }
        acc.sqrt()
    }

    /// Inner product under the stationary state-action law.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.mass).map(|((a, b), w)| w * a * b).sum()
    }

    /// Solves the discrete Bellman equation `q = rbar + gamma P^pi q` by
    /// value iteration to sup-change below `tol`.
    pub fn solve_q(&self, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let mut q = self.reward_mean.clone();
        for it in 0..max_iter {
            let pq = self.p_pi(&q);
            let next: Vec<f64> = (0..self.len())
                .map(|g| self.reward_mean[g] + self.gamma * pq[g])
                .collect();
            let change = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            q = next;
            if change <= tol * (1.0 - self.gamma) {
                return Ok(q);
            }
            if it + 1 == max_iter {
                return Err(Error::Convergence {
                    iterations: max_iter,
                    residual: change,
                });
            }
        }
        Ok(q)
    }
}
