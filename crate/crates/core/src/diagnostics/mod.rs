//! Well-posedness and ill-posedness diagnostics of the sieve problem.
//!
//! Population matrices are estimated by Monte Carlo over `(S, A)` drawn from
//! the stationary behavior law, with every conditional expectation over
//! `S'` done by quadrature. Coverage constants come from a
//! [`DiscreteModel`] on the same rules.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::mdp::{sample_trajectories, transition_weights, DiscreteModel, MdpSpec, PolicyDensity};
use crate::numerics::{
    min_singular, pinv_with_rank, sym_eig_extremes, sym_inv_sqrt, symmetrize, Matrix, QuadratureRule, Vector,
    DEFAULT_RTOL,
};

/// Burn-in steps before each Monte Carlo draw of `(S, A)`.
pub const DEFAULT_BURN_IN: usize = 200;
/// Contiguous batches used for batch-means standard errors.
pub const SE_BATCHES: usize = 10;

/// Grid points per dimension used for suprema over a `dim`-dimensional box.
pub fn sup_grid_per_dim(dim: usize) -> usize {
    match dim {
        0..=2 => 201,
        3..=4 => 51,
        _ => 11,
    }
}

/// Lower and upper coverage constants of the stationary state-action law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub p_min: f64,
    pub p_max: f64,
}

impl Coverage {
    /// Quadrature-node estimates from the discrete version of the chain.
    pub fn from_model(model: &DiscreteModel) -> Self {
        Coverage {
            p_min: model.p_min,
            p_max: model.p_max,
        }
    }

    /// `sqrt(p_max (1 + p_max gamma^2 / p_min)) / (sqrt(p_min) (1 - gamma))`.
    pub fn tau_bound(&self, gamma: f64) -> f64 {
        (self.p_max * (1.0 + self.p_max * gamma * gamma / self.p_min)).sqrt() / (self.p_min.sqrt() * (1.0 - gamma))
    }
}

/// Monte Carlo draws of `(S, A)` from the stationary behavior law and their
/// next-state quadrature weights. Reusing one sample across bases makes the
/// estimates for nested bases exactly comparable.
#[derive(Debug, Clone)]
pub struct Population {
    pub gamma: f64,
    pub points: Vec<Vec<f64>>,
    /// Row `i`: normalized weights of `S'` on the state-rule nodes given
    /// `points[i]`.
    pub next_weights: Matrix,
    pub state_rule: QuadratureRule,
    pub action_rule: QuadratureRule,
    pub target: PolicyDensity,
    pub coverage: Coverage,
    pub seed: u64,
}

impl Population {
    /// `mc_points` independent draws, each the state-action pair after
    /// `burn_in` behavior steps from a uniform start.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        mdp: &MdpSpec,
        behavior: &PolicyDensity,
        target: &PolicyDensity,
        state_rule: &QuadratureRule,
        action_rule: &QuadratureRule,
        coverage: Coverage,
        mc_points: usize,
        burn_in: usize,
        seed: u64,
    ) -> Result<Self> {
        if mc_points < SE_BATCHES * 2 {
            return Err(Error::input(format!(
                "need at least {} Monte Carlo points",
                SE_BATCHES * 2
            )));
        }
        let ds = sample_trajectories(mdp, behavior, mc_points, 1, burn_in, seed)?;
        let points = ds.state_actions();
        let rows: Vec<Vec<f64>> = ds
            .tuples
            .par_iter()
            .map(|x| transition_weights(mdp, &x.s, &x.a, state_rule))
            .collect::<Result<_>>()?;
        let ns = state_rule.len();
        let next_weights = Matrix::from_fn(mc_points, ns, |i, m| rows[i][m]);
        Ok(Population {
            gamma: mdp.gamma,
            points,
            next_weights,
            state_rule: state_rule.clone(),
            action_rule: action_rule.clone(),
            target: target.clone(),
            coverage,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sums of the per-point outer products on one batch of draws.
#[derive(Debug, Clone)]
struct Sums {
    n: usize,
    /// `sum psi psi'`
    g_psi: Matrix,
    /// `sum b b'`
    g_b: Matrix,
    /// `sum (T kappa)(T kappa)'`
    g_t: Matrix,
    /// `sum E[kappa kappa' | s, a]`
    g_kappa: Matrix,
    /// `sum b (T kappa)'`
    sigma: Matrix,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.n += o.n;
        self.g_psi += &o.g_psi;
        self.g_b += &o.g_b;
        self.g_t += &o.g_t;
        self.g_kappa += &o.g_kappa;
        self.sigma += &o.sigma;
    }

    fn scaled(&self) -> Sums {
        let n = self.n as f64;
        Sums {
            n: self.n,
            g_psi: symmetrize(&(&self.g_psi / n)),
            g_b: symmetrize(&(&self.g_b / n)),
            g_t: symmetrize(&(&self.g_t / n)),
            g_kappa: symmetrize(&(&self.g_kappa / n)),
            sigma: &self.sigma / n,
        }
    }
}

fn batch_sums(
    pop: &Population,
    psi: &BasisSpec,
    b: &BasisSpec,
    pn: &Matrix,
    range: std::ops::Range<usize>,
) -> Result<Sums> {
    let pts = &pop.points[range.clone()];
    let p = psi.eval(pts)?;
    let bm = if b == psi { p.clone() } else { b.eval(pts)? };
    let w = pop.next_weights.rows(range.start, range.len()).into_owned();
    let next = &w * pn;
    let t = &p - &next * pop.gamma;
    // E[kappa kappa' | x] = psi psi' - g (psi m' + m psi') + g^2 E[psi_pi psi_pi' | x]
    let wbar = Vector::from_iterator(w.ncols(), w.column_iter().map(|c| c.sum()));
    let mut second = pn.clone();
    for (m, mut row) in second.row_iter_mut().enumerate() {
        row *= wbar[m];
    }
    let pt = p.transpose();
    let cross = &pt * &next;
    let g = pop.gamma;
    let g_kappa = &pt * &p - (&cross + cross.transpose()) * g + pn.transpose() * second * (g * g);
    Ok(Sums {
        n: pts.len(),
        g_psi: &pt * &p,
        g_b: bm.transpose() * &bm,
        g_t: t.transpose() * &t,
        g_kappa,
        sigma: bm.transpose() * &t,
    })
}

/// `sup ||h|| / ||T h||` over the sieve space, from the Gram matrices of
/// `kappa` and of `T kappa`.
fn tau_from(g_kappa: &Matrix, g_t: &Matrix, rtol: f64) -> Result<(f64, bool)> {
    let (w, rank) = sym_inv_sqrt(g_t, rtol)?;
    let (_, hi) = sym_eig_extremes(&symmetrize(&(&w * g_kappa * &w)))?;
    Ok((hi.max(0.0).sqrt(), rank < g_t.nrows()))
}

fn batch_se(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Estimated sieve quantities for one pair of bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllPosednessReport {
    pub j: usize,
    pub k: usize,
    pub gamma: f64,
    pub mc_points: usize,
    pub seed: u64,
    /// `lambda_min(E[kappa kappa'])`.
    pub e_j: f64,
    pub e_j_se: f64,
    /// `lambda_min(E[psi psi'])`.
    pub omega_j: f64,
    /// `sigma_min(G_b^{-1/2} Sigma G_kappa^{-1/2})`.
    pub s_jk: f64,
    /// `sup ||h|| / ||T h||` over the sieve space.
    pub tau_j: f64,
    pub tau_j_se: f64,
    pub zeta_b: f64,
    pub zeta_kappa: f64,
    pub xi_psi: f64,
    pub xi_kappa: f64,
    /// Coverage estimates from the quadrature-node chain.
    pub p_min: f64,
    pub p_max: f64,
    pub tau_bound: f64,
    /// A Gram matrix fell below the rank tolerance; affected quantities use
    /// pseudo-inverses.
    pub gram_singular: bool,
}

/// All quantities of [`IllPosednessReport`] for `psi` and `b`.
///
/// `grid_per_dim` sets the suprema grid (default [`sup_grid_per_dim`]).
pub fn compute_report(
    pop: &Population,
    psi: &BasisSpec,
    b: &BasisSpec,
    grid_per_dim: Option<usize>,
) -> Result<IllPosednessReport> {
    crate::npiv::check_bases(psi, b, f64::INFINITY)?;
    let rtol = DEFAULT_RTOL;
    let pn = psi.policy_rows(&pop.target, &pop.state_rule.nodes, &pop.action_rule)?;
    let n = pop.len();
    let bounds: Vec<usize> = (0..=SE_BATCHES).map(|k| k * n / SE_BATCHES).collect();
    let batches: Vec<Sums> = (0..SE_BATCHES)
        .into_par_iter()
        .map(|k| batch_sums(pop, psi, b, &pn, bounds[k]..bounds[k + 1]))
        .collect::<Result<_>>()?;
    let mut total = batches[0].clone();
    for s in &batches[1..] {
        total.add(s);
    }
    let full = total.scaled();

    let mut singular = false;
    let (tau_j, t_sing) = tau_from(&full.g_kappa, &full.g_t, rtol)?;
    singular |= t_sing;
    let e_j = sym_eig_extremes(&full.g_kappa)?.0;
    let omega_j = sym_eig_extremes(&full.g_psi)?.0;
    let (gb_is, rank_b) = sym_inv_sqrt(&full.g_b, rtol)?;
    let (gk_is, rank_k) = sym_inv_sqrt(&full.g_kappa, rtol)?;
    singular |= rank_b < b.len() || rank_k < psi.len();
    let s_jk = min_singular(&(&gb_is * &full.sigma * &gk_is))?;

    let mut taus = Vec::with_capacity(SE_BATCHES);
    let mut ejs = Vec::with_capacity(SE_BATCHES);
    for s in &batches {
        let sc = s.scaled();
        taus.push(tau_from(&sc.g_kappa, &sc.g_t, rtol)?.0);
        ejs.push(sym_eig_extremes(&sc.g_kappa)?.0);
    }

    let joint = psi.domain.clone();
    let ds = pop.state_rule.domain.dim();
    let grid = joint.grid(grid_per_dim.unwrap_or_else(|| sup_grid_per_dim(joint.dim())));
    let zeta_b = row_sup(&(b.eval(&grid)? * &gb_is), false);
    let xi_psi = row_sup(&psi.eval(&grid)?, true);
    // kappa(s, a, s') = psi(s, a) - gamma psi_pi(s') on a coarser triple grid.
    let per = grid_per_dim.unwrap_or_else(|| sup_grid_per_dim(joint.dim() + ds));
    let sa = joint.grid(per);
    let sn = pop.state_rule.domain.grid(per);
    let psa = psi.eval(&sa)?;
    let pnext = psi.policy_rows(&pop.target, &sn, &pop.action_rule)? * pop.gamma;
    let (psa_w, pnext_w) = (&psa * &gk_is, &pnext * &gk_is);
    let (zeta_kappa, xi_kappa) = (0..sa.len())
        .into_par_iter()
        .map(|i| {
            let (mut z, mut x) = (0.0f64, 0.0f64);
            for m in 0..sn.len() {
                z = z.max((psa_w.row(i) - pnext_w.row(m)).norm());
                x = x.max((psa.row(i) - pnext.row(m)).lp_norm(1));
            }
            (z, x)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));

    Ok(IllPosednessReport {
        j: psi.len(),
        k: b.len(),
        gamma: pop.gamma,
        mc_points: n,
        seed: pop.seed,
        e_j,
        e_j_se: batch_se(&ejs),
        omega_j,
        s_jk,
        tau_j,
        tau_j_se: batch_se(&taus),
        zeta_b,
        zeta_kappa,
        xi_psi,
        xi_kappa,
        p_min: pop.coverage.p_min,
        p_max: pop.coverage.p_max,
        tau_bound: pop.coverage.tau_bound(pop.gamma),
        gram_singular: singular,
    })
}

fn row_sup(m: &Matrix, l1: bool) -> f64 {
    (0..m.nrows())
        .into_par_iter()
        .map(|i| if l1 { m.row(i).lp_norm(1) } else { m.row(i).norm() })
        .reduce(|| 0.0, f64::max)
}

impl IllPosednessReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::input(e.to_string()))
    }
}

/// Outcome of the lower bound on `e_J` under both readings of its constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EjCheck {
    /// `(p_min / p_max) (1 - gamma)^2 omega_J`.
    pub floor_proof: f64,
    /// `(p_min^2 / p_max) (1 - gamma)^2 omega_J`.
    pub floor_statement: f64,
    /// `e_J - floor_proof`.
    pub margin_proof: f64,
    pub margin_statement: f64,
    /// Monte Carlo slack allowed, three batch standard errors.
    pub slack: f64,
    /// `margin_proof >= -slack`.
    pub passed: bool,
}

pub fn check_ej_bound(report: &IllPosednessReport) -> EjCheck {
    let c = (1.0 - report.gamma).powi(2) * report.omega_j / report.p_max;
    let floor_proof = report.p_min * c;
    let floor_statement = report.p_min * report.p_min * c;
    let slack = 3.0 * report.e_j_se;
    EjCheck {
        floor_proof,
        floor_statement,
        margin_proof: report.e_j - floor_proof,
        margin_statement: report.e_j - floor_statement,
        slack,
        passed: report.e_j - floor_proof >= -slack,
    }
}

/// The three terms of the `L2` well-posedness chain for `Delta = Q1 - Q2`:
/// `sqrt(p_min/p_max)(1-gamma)||Delta|| <= ||T h(Delta)|| <= ||h(Delta)||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Chain {
    pub left: f64,
    pub middle: f64,
    pub right: f64,
}

impl L2Chain {
    /// Smallest of `middle - left` and `right - middle`.
    pub fn margin(&self) -> f64 {
        (self.middle - self.left).min(self.right - self.middle)
    }
}

/// Evaluates the `L2` chain on the discrete chain for each pair, given as
/// values on `model.points()`.
pub fn check_wellposedness_l2(model: &DiscreteModel, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<L2Chain>> {
    let factor = (model.p_min / model.p_max).sqrt() * (1.0 - model.gamma);
    pairs
        .par_iter()
        .map(|(q1, q2)| {
            if q1.len() != model.len() || q2.len() != model.len() {
                return Err(Error::input("Q values must be given at every model grid point"));
            }
            let d: Vec<f64> = q1.iter().zip(q2).map(|(a, b)| a - b).collect();
            let pd = model.p_pi(&d);
            let th: Vec<f64> = d.iter().zip(&pd).map(|(v, p)| v - model.gamma * p).collect();
            Ok(L2Chain {
                left: factor * model.l2(&d),
                middle: model.l2(&th),
                right: model.l2_joint(&model.h_pi(&d)),
            })
        })
        .collect()
}

/// The sup-norm contraction chain for `Delta = Q - Q^pi`:
/// `||h||/(1+gamma) <= ||Delta|| <= ||T h||/(1-gamma) <= ||h||/(1-gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupChain {
    pub terms: [f64; 4],
}

impl SupChain {
    /// Smallest gap between consecutive terms.
    pub fn margin(&self) -> f64 {
        self.terms.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

pub fn check_contraction_sup(model: &DiscreteModel, delta: &[f64]) -> Result<SupChain> {
    if delta.len() != model.len() {
        return Err(Error::input("Delta must be given at every model grid point"));
    }
    let g = model.gamma;
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let h = model.h_pi(delta);
    let h_sup = h.amax();
    let th = model.apply_t(&h);
    Ok(SupChain {
        terms: [h_sup / (1.0 + g), sup(delta), sup(&th) / (1.0 - g), h_sup / (1.0 - g)],
    })
}

/// Weighted least-squares coefficients of `f` on `psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coefficients: Vec<f64>,
    pub rank_deficient: bool,
}

/// `argmin_c sum_i w_i (f(x_i) - psi(x_i)' c)^2` (uniform weights when
/// `None`).
pub fn project_onto_sieve(
    f: impl Fn(&[f64]) -> f64,
    psi: &BasisSpec,
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
) -> Result<Projection> {
    if points.len() < psi.len() {
        return Err(Error::input(format!("{} points for J = {}", points.len(), psi.len())));
    }
    if let Some(w) = weights {
        if w.len() != points.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::input(
                "projection weights must be one non-negative value per point",
            ));
        }
    }
    let root = |i: usize| weights.map_or(1.0, |w| w[i].sqrt());
    let mut x = psi.eval(points)?;
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= root(i);
    }
    let y = Vector::from_iterator(points.len(), points.iter().enumerate().map(|(i, p)| root(i) * f(p)));
    let (pinv, rank) = pinv_with_rank(&x, DEFAULT_RTOL)?;
    Ok(Projection {
        coefficients: (pinv * y).iter().copied().collect(),
        rank_deficient: rank < psi.len(),
    })
}
