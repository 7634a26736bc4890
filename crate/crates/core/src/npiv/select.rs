use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, Family};
use crate::error::{Error, Result};
use crate::mdp::{Dataset, PolicyDensity};
use crate::numerics::{BoxDomain, QuadratureRule, DEFAULT_RTOL};

use super::fit::{fit_moments, projected_residual, SieveFit};
use super::system::{dataset_moments, SieveSetup};

/// Which error norm the sieve dimension is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JNorm {
    /// `J ~ (NT / log NT)^{d/(2p+d)}`; needs `2p > d`.
    Sup,
    /// `J ~ NT^{d/(2p+d)}`.
    L2,
}

/// `multiplier * base^{d/(2p+d)}` before any rounding.
pub fn j_raw(nt: usize, p: f64, d: usize, norm: JNorm, multiplier: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) || !(multiplier > 0.0 && multiplier.is_finite()) || d == 0 {
        return Err(Error::input(format!(
            "need p > 0, multiplier > 0 and d >= 1 (got p = {p}, multiplier = {multiplier}, d = {d})"
        )));
    }
    let nt_f = nt as f64;
    let base = match norm {
        JNorm::L2 => {
            if nt == 0 {
                return Err(Error::input("NT must be positive"));
            }
            nt_f
        }
        JNorm::Sup => {
            if 2.0 * p <= d as f64 {
                return Err(Error::capability(format!(
                    "sup-norm rates need 2p > d (p = {p}, d = {d})"
                )));
            }
            if nt < 3 {
                return Err(Error::input("sup-norm mode needs NT >= 3"));
            }
            nt_f / nt_f.ln()
        }
    };
    Ok(multiplier * base.powf(d as f64 / (2.0 * p + d as f64)))
}

/// Per-dimension counts of the smallest balanced tensor basis with at least
/// `target` functions: counts differ by at most one, larger ones first, and
/// none is below `min_count`.
pub fn balanced_counts(target: usize, d: usize, min_count: usize) -> Vec<usize> {
    let min_count = min_count.max(1);
    let mut m = min_count;
    loop {
        for extra in 0..d {
            let counts: Vec<usize> = (0..d).map(|i| if i < extra { m + 1 } else { m }).collect();
            if counts.iter().product::<usize>() >= target {
                return counts;
            }
        }
        m += 1;
    }
}

/// The sieve dimension picked for one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JChoice {
    pub raw: f64,
    /// `J`, the product of `counts`.
    pub j: usize,
    pub counts: Vec<usize>,
}

/// `round(multiplier * base^{d/(2p+d)})` rounded up to a feasible tensor
/// dimension for `family`.
pub fn choose_j(nt: usize, p: f64, d: usize, norm: JNorm, multiplier: f64, family: Family) -> Result<JChoice> {
    let raw = j_raw(nt, p, d, norm, multiplier)?;
    let counts = balanced_counts((raw.round() as usize).max(1), d, family.min_count());
    Ok(JChoice {
        raw,
        j: counts.iter().product(),
        counts,
    })
}

/// Rule that turns a sample size into the pair of bases `(psi, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveDesign {
    pub psi_family: Family,
    pub b_family: Family,
    /// Instrument functions per dimension beyond those of `psi`.
    pub b_extra: usize,
    /// Smoothness assumed for the dimension rule.
    pub p: f64,
    pub norm: JNorm,
    pub domain: BoxDomain,
}

impl SieveDesign {
    pub fn bases(&self, nt: usize, multiplier: f64) -> Result<(BasisSpec, BasisSpec, JChoice)> {
        let choice = choose_j(nt, self.p, self.domain.dim(), self.norm, multiplier, self.psi_family)?;
        let psi = BasisSpec::new(self.psi_family, choice.counts.clone(), self.domain.clone())?;
        let b_counts = choice
            .counts
            .iter()
            .map(|m| (m + self.b_extra).max(self.b_family.min_count()))
            .collect();
        let b = BasisSpec::new(self.b_family, b_counts, self.domain.clone())?;
        Ok((psi, b, choice))
    }
}

/// Holdout score of one candidate multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierScore {
    pub multiplier: f64,
    pub j: usize,
    /// Projected Bellman residual on the holdout trajectories.
    pub score: f64,
}

/// Result of [`select_multiplier`].
#[derive(Debug, Clone)]
pub struct Selection {
    pub multiplier: f64,
    pub scores: Vec<MultiplierScore>,
    /// Fit of the winner on the training trajectories only.
    pub fit: SieveFit,
}

/// Picks the multiplier whose training fit has the smallest projected
/// Bellman residual on held-out trajectories. All candidates are scored
/// against one instrument basis, that of the largest candidate, so scores
/// are comparable. Ties go to the earlier candidate.
#[allow(clippy::too_many_arguments)]
pub fn select_multiplier(
    train: &Dataset,
    holdout: &Dataset,
    design: &SieveDesign,
    multipliers: &[f64],
    target: &PolicyDensity,
    gamma: f64,
    action_rule: &QuadratureRule,
) -> Result<Selection> {
    if multipliers.is_empty() {
        return Err(Error::config("no candidate multipliers"));
    }
    if holdout.is_empty() {
        return Err(Error::input("holdout set is empty"));
    }
    let nt = train.len();
    let cands: Vec<_> = multipliers
        .iter()
        .map(|&m| design.bases(nt, m).map(|b| (m, b)))
        .collect::<Result<_>>()?;
    let b_val = cands
        .iter()
        .max_by_key(|(_, (_, b, _))| b.len())
        .map(|(_, (_, b, _))| b.clone())
        .expect("non-empty");
    let mut best: Option<(f64, f64, SieveFit)> = None;
    let mut scores = Vec::with_capacity(cands.len());
    for (m, (psi, b, choice)) in cands {
        let setup = SieveSetup::new(&psi, &b, target, gamma, action_rule);
        let fit = fit_moments(&dataset_moments(train, &setup)?, &psi, &b, gamma, DEFAULT_RTOL)?;
        let mut val = SieveSetup::new(&psi, &b_val, target, gamma, action_rule);
        val.k_ratio = f64::INFINITY;
        let score = projected_residual(&dataset_moments(holdout, &val)?, &fit.coefficients, DEFAULT_RTOL)?;
        scores.push(MultiplierScore {
            multiplier: m,
            j: choice.j,
            score,
        });
        if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            best = Some((m, score, fit));
        }
    }
    let (multiplier, _, fit) = best.expect("non-empty");
    Ok(Selection {
        multiplier,
        scores,
        fit,
    })
}
