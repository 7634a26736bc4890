use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, QuadratureRule};

use super::model::{concat, MdpSpec};
use super::policy::{ActionIntegrand, PolicyDensity};
use super::target_fn::TargetFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpOrder {
    /// Tensor-product linear interpolation.
    Linear,
    /// Tensor-product 4-point Lagrange interpolation.
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Node values are the closed-form `Q*` itself.
    Designed { q_star: TargetFn },
    /// Node values come from value iteration; `residual` is the sup-norm
    /// change produced by one more Bellman application.
    FixedPoint { tol: f64, iterations: usize, residual: f64 },
}

/// Q-function values on a uniform tensor grid over the state-action box,
/// first coordinate varying slowest, with tensor interpolation in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleQ {
    pub domain: BoxDomain,
    pub per_dim: usize,
    pub values: Vec<f64>,
    pub order: InterpOrder,
    pub provenance: Provenance,
}

impl OracleQ {
    /// Grid of the closed-form `q_star`.
    pub fn designed(q_star: &TargetFn, domain: &BoxDomain, per_dim: usize, order: InterpOrder) -> Result<Self> {
        check_grid(per_dim, order)?;
        q_star.validate(domain.dim())?;
        let values = domain.grid(per_dim).iter().map(|x| q_star.value(x)).collect();
        Ok(OracleQ {
            domain: domain.clone(),
            per_dim,
            values,
            order,
            provenance: Provenance::Designed { q_star: q_star.clone() },
        })
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        self.domain.grid(self.per_dim)
    }

    /// Interpolated value at `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::input(format!("point {x:?} lies outside the oracle grid")));
        }
        Ok(stencil(&self.domain, self.per_dim, self.order, x)
            .into_iter()
            .map(|(i, w)| w * self.values[i])
            .sum())
    }

    /// Sup-norm Bellman residual recorded at construction, if any.
    pub fn residual(&self) -> Option<f64> {
        match self.provenance {
            Provenance::FixedPoint { residual, .. } => Some(residual),
            Provenance::Designed { .. } => None,
        }
    }
}

fn check_grid(per_dim: usize, order: InterpOrder) -> Result<()> {
    let min = match order {
        InterpOrder::Linear => 2,
        InterpOrder::Cubic => 4,
    };
    if per_dim < min.max(5) {
        return Err(Error::input(format!(
            "oracle grid needs at least 5 nodes per dimension, got {per_dim}"
        )));
    }
    Ok(())
}

/// Flat grid indices and weights of the interpolation stencil at `x`.
fn stencil(domain: &BoxDomain, n: usize, order: InterpOrder, x: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = vec![(0, 1.0)];
    for k in 0..domain.dim() {
        let h = domain.width(k) / (n - 1) as f64;
        let u = ((x[k] - domain.lo[k]) / h).clamp(0.0, (n - 1) as f64);
        let axis: Vec<(usize, f64)> = match order {
            InterpOrder::Linear => {
                let i = (u.floor() as usize).min(n - 2);
                let t = u - i as f64;
                vec![(i, 1.0 - t), (i + 1, t)]
            }
            InterpOrder::Cubic => {
                let i = (u.floor() as usize).min(n - 2);
                let base = i.saturating_sub(1).min(n - 4);
                let t = u - base as f64;
                (0..4)
                    .map(|j| {
                        let mut w = 1.0;
                        for m in 0..4 {
                            if m != j {
                                w *= (t - m as f64) / (j as f64 - m as f64);
                            }
                        }
                        (base + j, w)
                    })
                    .collect()
            }
        };
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for &(idx, w) in &out {
            for &(i, v) in &axis {
                if v != 0.0 {
                    next.push((idx * n + i, w * v));
                }
            }
        }
        out = next;
    }
    out
}

/// Normalized next-state weights `w_m q(s_m | s, a) / sum`.
pub(crate) fn transition_weights(mdp: &MdpSpec, s: &[f64], a: &[f64], state_rule: &QuadratureRule) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = state_rule
        .nodes
        .iter()
        .zip(&state_rule.weights)
        .map(|(sn, wm)| wm * mdp.transition.density(sn, s, a))
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numerical(format!(
            "transition density has no mass on the state nodes from ({s:?}, {a:?})"
        )));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

fn check_state_rule(mdp: &MdpSpec, rule: &QuadratureRule) -> Result<()> {
    if rule.domain != mdp.state_box {
        return Err(Error::input("next-state quadrature rule must cover the state box"));
    }
    Ok(())
}

/// `(T f)(s, a) = int f(s, a, s') q(s' | s, a) ds'` at each `(s, a)` point,
/// by quadrature over next states with weights renormalized to one.
pub fn apply_t(
    mdp: &MdpSpec,
    f: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Sync,
    points: &[Vec<f64>],
    state_rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_state_rule(mdp, state_rule)?;
    let ds = mdp.state_dim();
    let joint = mdp.joint_box();
    points
        .par_iter()
        .map(|p| {
            if !joint.contains(p) {
                return Err(Error::input(format!("point {p:?} outside the state-action box")));
            }
            let (s, a) = p.split_at(ds);
            let w = transition_weights(mdp, s, a, state_rule)?;
            Ok(state_rule
                .nodes
                .iter()
                .zip(&w)
                .filter(|(_, &wm)| wm != 0.0)
                .map(|(sn, wm)| wm * f(s, a, sn))
                .sum())
        })
        .collect()
}

/// Solves `Q = rbar + gamma P^pi Q` on a uniform grid by value iteration.
///
/// `rbar` and the next-state expectation use `state_rule`; the integral
/// over next actions uses `action_rule` (or the point-mass location) with
/// `Q` interpolated off-grid. Stops once the sup-norm change is at most
/// `tol * (1 - gamma)`.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_oracle(
    mdp: &MdpSpec,
    target: &PolicyDensity,
    per_dim: usize,
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
    tol: f64,
    max_iter: usize,
    order: InterpOrder,
) -> Result<OracleQ> {
    check_grid(per_dim, order)?;
    check_state_rule(mdp, state_rule)?;
    if !(tol > 0.0) {
        return Err(Error::input(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::input("max_iter must be at least 1"));
    }
    let domain = mdp.joint_box();
    let ds = mdp.state_dim();
    let grid = domain.grid(per_dim);
    let gamma = mdp.gamma;
    let ns = state_rule.len();

    // Next-state weights and expected rewards at every grid node.
    let pre = mdp.reward.precompute(&state_rule.nodes);
    let rows: Vec<(Vec<f64>, f64)> = grid
        .par_iter()
        .map(|x| {
            let (s, a) = x.split_at(ds);
            let w = transition_weights(mdp, s, a, state_rule)?;
            let rbar = (0..ns)
                .filter(|&m| w[m] != 0.0)
                .map(|m| w[m] * mdp.reward.mean_with(s, a, &state_rule.nodes, &pre, m))
                .sum();
            Ok((w, rbar))
        })
        .collect::<Result<_>>()?;

    // V(s'_m) = sum_k c_k Q[idx_k]: fold policy weights into the stencils.
    let v_ops: Vec<Vec<(usize, f64)>> = state_rule
        .nodes
        .iter()
        .map(|sn| {
            let mut op: Vec<(usize, f64)> = Vec::new();
            let mut add = |a: &[f64], weight: f64| {
                for (i, c) in stencil(&domain, per_dim, order, &concat(sn, a)) {
                    op.push((i, weight * c));
                }
            };
            match target.action_integrand(sn, action_rule)? {
                ActionIntegrand::Point(a) => {
                    if !mdp.action_box.contains(&a) {
                        return Err(Error::input(format!("target action {a:?} outside the action box")));
                    }
                    add(&a, 1.0)
                }
                ActionIntegrand::Weights(w) => {
                    for (a, wl) in action_rule.nodes.iter().zip(w) {
                        if wl != 0.0 {
                            add(a, wl);
                        }
                    }
                }
            }
            op.sort_by_key(|e| e.0);
            op.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            Ok(op)
        })
        .collect::<Result<_>>()?;

    let bellman = |q: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = v_ops.iter().map(|op| op.iter().map(|&(i, c)| c * q[i]).sum()).collect();
        rows.par_iter()
            .map(|(w, rbar)| rbar + gamma * w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let sup_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let mut q: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut iterations = 1;
    if gamma > 0.0 {
        loop {
            let next = bellman(&q);
            let change = sup_diff(&next, &q);
            q = next;
            iterations += 1;
            if change <= tol * (1.0 - gamma) {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::Convergence {
                    iterations,
                    residual: change,
                });
            }
        }
    }
    let residual = sup_diff(&bellman(&q), &q);
    Ok(OracleQ {
        domain,
        per_dim,
        values: q,
        order,
        provenance: Provenance::FixedPoint {
            tol,
            iterations,
            residual,
        },
    })
}

/// Initial-state distribution `F` for policy values.
#[derive(Clone)]
pub enum InitialDist {
    PointMass(Vec<f64>),
    /// Uniform on the state box.
    Uniform,
    /// Unnormalized density on the state box.
    Density(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for InitialDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDist::PointMass(s) => f.debug_tuple("PointMass").field(s).finish(),
            InitialDist::Uniform => f.write_str("Uniform"),
            InitialDist::Density(_) => f.write_str("Density(..)"),
        }
    }
}

impl InitialDist {
    /// Support points and probabilities of the discretized distribution;
    /// the rule is ignored for point masses.
    pub fn nodes(&self, state_rule: &QuadratureRule) -> Result<Vec<(Vec<f64>, f64)>> {
        match self {
            InitialDist::PointMass(s0) => {
                if !state_rule.domain.contains(s0) {
                    return Err(Error::input(format!("initial state {s0:?} outside the state box")));
                }
                Ok(vec![(s0.clone(), 1.0)])
            }
            InitialDist::Uniform => {
                let vol = state_rule.domain.volume();
                Ok(state_rule
                    .nodes
                    .iter()
                    .zip(&state_rule.weights)
                    .map(|(s, w)| (s.clone(), w / vol))
                    .collect())
            }
            InitialDist::Density(f) => {
                let mut out = Vec::new();
                let mut total = 0.0;
                for (s, w) in state_rule.nodes.iter().zip(&state_rule.weights) {
                    let p = f(s);
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::input(format!("initial density {p} at {s:?}")));
                    }
                    if p > 0.0 {
                        out.push((s.clone(), w * p));
                        total += w * p;
                    }
                }
                if total <= 0.0 {
                    return Err(Error::input("initial density has no mass on the quadrature nodes"));
                }
                out.iter_mut().for_each(|(_, w)| *w /= total);
                Ok(out)
            }
        }
    }

    /// `int g(s) F(ds)`.
    pub fn integrate(&self, state_rule: &QuadratureRule, g: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (s, w) in self.nodes(state_rule)? {
            acc += w * g(&s)?;
        }
        Ok(acc)
    }
}

/// `v = int int pi(a|s) Q(s, a) da F(ds)` for the oracle `Q`.
pub fn oracle_value(
    oq: &OracleQ,
    target: &PolicyDensity,
    initial: &InitialDist,
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
) -> Result<f64> {
    let ds = state_rule.domain.dim();
    if ds + action_rule.domain.dim() != oq.domain.dim() {
        return Err(Error::input("quadrature rules do not match the oracle dimensions"));
    }
    initial.integrate(state_rule, |s| {
        debug_assert_eq!(s.len(), ds);
        let err = std::cell::RefCell::new(None);
        let v = target.integrate(s, action_rule, |a| {
            oq.value(&concat(s, a)).unwrap_or_else(|e| {
                *err.borrow_mut() = Some(e);
                0.0
            })
        });
        match (v, err.into_inner()) {
            (_, Some(e)) | (Err(e), _) => Err(e),
            (Ok(v), None) => Ok(v),
        }
    })
}
