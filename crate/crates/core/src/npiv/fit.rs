use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, MultiIndex};
use crate::error::{Error, Result};
use crate::mdp::{InitialDist, MdpSpec, PolicyDensity};
use crate::numerics::{
    condition_number, ensure_finite, pinv_with_rank, sym_inv_sqrt, Matrix, QuadratureRule, SeededStream, Vector,
    DEFAULT_RTOL,
};

use super::system::{AssembledSystem, Moments};

/// Numerical facts about one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_rows: usize,
    pub rank_btb: usize,
    /// `rank(B'B) < K`: the instrument Gram was pseudo-inverted.
    pub rank_deficient: bool,
    /// Rank of the whitened `K x J` system.
    pub rank_projected: usize,
    pub cond_btb: f64,
    pub cond_projected: f64,
    /// `||P_B (R - Gamma c)||^2 / n` at the solution.
    pub projected_objective: f64,
    /// Euclidean norm of the gradient of `||P_B (R - Gamma c)||^2` at `c`.
    pub grad_norm: f64,
    pub r_norm: f64,
}

/// Fitted sieve coefficients `c` with the bases that give them meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveFit {
    pub coefficients: Vec<f64>,
    pub psi: BasisSpec,
    pub b: BasisSpec,
    pub gamma: f64,
    pub rtol: f64,
    pub diagnostics: FitDiagnostics,
}

/// `W = (B'B/n)^{-1/2}` with `S = W B'Gamma / n` and `y = W B'R / n`.
struct Whitened {
    s: Matrix,
    y: Vector,
    rank_btb: usize,
}

fn whiten(m: &Moments, rtol: f64) -> Result<Whitened> {
    let n = m.n as f64;
    let (w, rank_btb) = sym_inv_sqrt(&(&m.btb / n), rtol)?;
    Ok(Whitened {
        s: &w * &m.btg / n,
        y: &w * &m.btr / n,
        rank_btb,
    })
}

/// Solves the 2SLS problem from accumulated moments.
pub fn fit_moments(m: &Moments, psi: &BasisSpec, b: &BasisSpec, gamma: f64, rtol: f64) -> Result<SieveFit> {
    let (j, k) = (psi.len(), b.len());
    if m.btg.shape() != (k, j) || m.btb.shape() != (k, k) || m.btr.len() != k {
        return Err(Error::input(format!(
            "moments have shape {:?} but the bases give K = {k}, J = {j}",
            m.btg.shape()
        )));
    }
    if m.n < k {
        return Err(Error::input(format!("{} rows are fewer than K = {k}", m.n)));
    }
    ensure_finite(&m.btb, "B'B")?;
    ensure_finite(&m.btg, "B'Gamma")?;
    if !m.btr.iter().all(|v| v.is_finite()) || !m.rtr.is_finite() {
        return Err(Error::input("B'R: non-finite entry"));
    }
    let wh = whiten(m, rtol)?;
    let (s_pinv, rank_projected) = pinv_with_rank(&wh.s, rtol)?;
    let c = &s_pinv * &wh.y;
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("non-finite 2SLS coefficients"));
    }
    let resid = &wh.y - &wh.s * &c;
    let grad = wh.s.transpose() * &resid * (-2.0 * m.n as f64);
    let diagnostics = FitDiagnostics {
        n_rows: m.n,
        rank_btb: wh.rank_btb,
        rank_deficient: wh.rank_btb < k,
        rank_projected,
        cond_btb: condition_number(&m.btb)?,
        cond_projected: condition_number(&wh.s)?,
        projected_objective: resid.norm_squared(),
        grad_norm: grad.norm(),
        r_norm: m.rtr.sqrt(),
    };
    Ok(SieveFit {
        coefficients: c.iter().copied().collect(),
        psi: psi.clone(),
        b: b.clone(),
        gamma,
        rtol,
        diagnostics,
    })
}

/// `c = [G'B(B'B)^- B'G]^- G'B(B'B)^- B'R` with `G = Gamma_pi`.
pub fn fit_2sls(sys: &AssembledSystem, rtol: f64) -> Result<SieveFit> {
    ensure_finite(&sys.psi, "Psi")?;
    ensure_finite(&sys.g_pi, "G_pi")?;
    fit_moments(&sys.moments(), &sys.psi_spec, &sys.b_spec, sys.gamma, rtol)
}

/// `||P_B (R - Gamma c)||^2 / n` of `c` on other data; `m` must use the
/// basis `c` was fitted in.
pub fn projected_residual(m: &Moments, c: &[f64], rtol: f64) -> Result<f64> {
    if c.len() != m.btg.ncols() {
        return Err(Error::input(format!(
            "{} coefficients for J = {}",
            c.len(),
            m.btg.ncols()
        )));
    }
    let wh = whiten(m, rtol)?;
    Ok((&wh.y - &wh.s * Vector::from_column_slice(c)).norm_squared())
}

impl SieveFit {
    pub fn coefficients(&self) -> Vector {
        Vector::from_column_slice(&self.coefficients)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        let fit: SieveFit =
            serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        fit.psi.validate()?;
        fit.b.validate()?;
        if fit.coefficients.len() != fit.psi.len() || !fit.coefficients.iter().all(|v| v.is_finite()) {
            return Err(Error::input(format!(
                "{}: coefficients do not match psi",
                path.display()
            )));
        }
        Ok(fit)
    }
}

/// `Q(x) = psi^J(x)' c` at each point.
pub fn predict_q(fit: &SieveFit, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    predict_q_deriv(fit, points, &MultiIndex::zero(fit.psi.dims()))
}

/// `d^alpha Q(x) = d^alpha psi^J(x)' c` at each point.
pub fn predict_q_deriv(fit: &SieveFit, points: &[Vec<f64>], alpha: &MultiIndex) -> Result<Vec<f64>> {
    let m = fit.psi.eval_deriv(points, alpha)?;
    Ok((m * fit.coefficients()).iter().copied().collect())
}

/// Sup and weighted `L2` norms of a Bellman residual over a point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub sup: f64,
    pub l2: f64,
}

/// `rbar(s, a) + gamma (P^pi Q)(s, a) - Q(s, a)` at each point, with the
/// next-state integral over `state_rule` and next actions over
/// `action_rule`.
pub fn bellman_residual(
    fit: &SieveFit,
    mdp: &MdpSpec,
    target: &PolicyDensity,
    points: &[Vec<f64>],
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    if fit.psi.dims() != mdp.state_dim() + mdp.action_dim() {
        return Err(Error::input("fit dimensions do not match the MDP"));
    }
    if state_rule.domain != mdp.state_box {
        return Err(Error::input("next-state quadrature rule must cover the state box"));
    }
    let c = fit.coefficients();
    let v_next: Vec<f64> = (fit.psi.policy_rows(target, &state_rule.nodes, action_rule)? * &c)
        .iter()
        .copied()
        .collect();
    let q = predict_q(fit, points)?;
    let pre = mdp.reward.precompute(&state_rule.nodes);
    let ds = mdp.state_dim();
    points
        .par_iter()
        .zip(q.par_iter())
        .map(|(p, &qv)| {
            let (s, a) = p.split_at(ds);
            let w = crate::mdp::transition_weights(mdp, s, a, state_rule)?;
            let mut acc = 0.0;
            for (m, &wm) in w.iter().enumerate() {
                if wm != 0.0 {
                    let r = mdp.reward.mean_with(s, a, &state_rule.nodes, &pre, m);
                    acc += wm * (r + mdp.gamma * v_next[m]);
                }
            }
            Ok(acc - qv)
        })
        .collect()
}

/// Norms of [`bellman_residual`]; `weights` (uniform when `None`) are
/// normalized to sum to one for the `L2` norm.
pub fn bellman_residual_norms(
    fit: &SieveFit,
    mdp: &MdpSpec,
    target: &PolicyDensity,
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
) -> Result<ResidualNorms> {
    let res = bellman_residual(fit, mdp, target, points, state_rule, action_rule)?;
    let sup = res.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let l2 = match weights {
        Some(w) => {
            if w.len() != res.len() || w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::input(
                    "residual weights must be one non-negative value per point",
                ));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::input("residual weights sum to zero"));
            }
            (res.iter().zip(w).map(|(r, w)| w * r * r).sum::<f64>() / total).sqrt()
        }
        None => (res.iter().map(|r| r * r).sum::<f64>() / res.len().max(1) as f64).sqrt(),
    };
    Ok(ResidualNorms { sup, l2 })
}

/// `l = int int pi(a|s) psi^J(s, a) da F(ds)`, so that the plug-in value
/// is `l' c`.
pub fn value_functional(
    psi: &BasisSpec,
    target: &PolicyDensity,
    initial: &InitialDist,
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
) -> Result<Vector> {
    let nodes = initial.nodes(state_rule)?;
    let states: Vec<Vec<f64>> = nodes.iter().map(|(s, _)| s.clone()).collect();
    let rows = psi.policy_rows(target, &states, action_rule)?;
    let w = Vector::from_iterator(nodes.len(), nodes.iter().map(|(_, w)| *w));
    Ok(rows.transpose() * w)
}

/// Plug-in value `int int pi(a|s) Q(s, a) da F(ds)`.
pub fn plugin_value(
    fit: &SieveFit,
    target: &PolicyDensity,
    initial: &InitialDist,
    state_rule: &QuadratureRule,
    action_rule: &QuadratureRule,
) -> Result<f64> {
    let ell = value_functional(&fit.psi, target, initial, state_rule, action_rule)?;
    Ok(ell.dot(&fit.coefficients()))
}

/// Bootstrap standard error of `l' c` by resampling whole trajectories.
///
/// Draw `r` uses stream `(seed, r)`; failed refits are skipped and at least
/// half of the draws must succeed.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_value_se(
    per_traj: &[Moments],
    psi: &BasisSpec,
    b: &BasisSpec,
    gamma: f64,
    ell: &Vector,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let n = per_traj.len();
    if n < 2 || draws < 2 {
        return Err(Error::input("bootstrap needs at least two trajectories and two draws"));
    }
    let values: Vec<Option<f64>> = (0..draws)
        .into_par_iter()
        .map(|r| {
            let mut rng = SeededStream::new(seed, r as u64).rng();
            let mut acc = Moments::zeros(b.len(), psi.len());
            for _ in 0..n {
                acc.add(&per_traj[rng.random_range(0..n)]);
            }
            fit_moments(&acc, psi, b, gamma, DEFAULT_RTOL)
                .ok()
                .map(|f| ell.dot(&f.coefficients()))
        })
        .collect();
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    if ok.len() * 2 < draws {
        return Err(Error::numerical(format!(
            "only {} of {draws} bootstrap refits succeeded",
            ok.len()
        )));
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(var.sqrt())
}
