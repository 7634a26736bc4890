use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{Family, MultiIndex};
use crate::error::{Error, Result};
use crate::mdp::recipes::RecipeId;
use crate::npiv::JNorm;

/// Basis family name as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Bspline,
    Cosine,
    Legendre,
}

impl FamilyName {
    pub fn with_degree(self, degree: usize) -> Family {
        match self {
            FamilyName::Bspline => Family::Bspline { degree },
            FamilyName::Cosine => Family::Cosine,
            FamilyName::Legendre => Family::Legendre,
        }
    }
}

fn default_gamma() -> f64 {
    0.9
}
fn default_noise() -> f64 {
    1.0
}
fn default_family() -> FamilyName {
    FamilyName::Bspline
}
fn default_degree() -> usize {
    3
}
fn default_b_extra() -> usize {
    1
}
fn default_p() -> f64 {
    2.0
}
fn default_norm() -> JNorm {
    JNorm::L2
}
fn default_multiplier() -> f64 {
    1.0
}
fn default_candidates() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_holdout() -> f64 {
    0.2
}
fn default_replications() -> usize {
    10
}
fn default_burn_in() -> usize {
    200
}
fn default_grid() -> usize {
    201
}
fn default_margin() -> f64 {
    0.05
}

/// A rate study as read from a flat TOML file. Unknown keys are rejected.
///
/// Units: `gamma` per step; `noise_sd` in reward units; `eval_margin` as a
/// fraction of each box width; `burn_in` in transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub recipe: RecipeId,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_family")]
    pub psi_family: FamilyName,
    #[serde(default = "default_degree")]
    pub psi_degree: usize,
    #[serde(default = "default_family")]
    pub b_family: FamilyName,
    #[serde(default = "default_degree")]
    pub b_degree: usize,
    /// Instrument functions per dimension beyond those of `psi`.
    #[serde(default = "default_b_extra")]
    pub b_extra: usize,
    /// Smoothness used by the dimension rule.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_norm")]
    pub j_rule: JNorm,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    /// Choose the multiplier per replication from `multipliers` on held-out
    /// trajectories instead of using `multiplier`.
    #[serde(default)]
    pub select_multiplier: bool,
    #[serde(default = "default_candidates")]
    pub multipliers: Vec<f64>,
    /// Fraction of trajectories held out when selecting.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// `[N, T]` pairs, strictly increasing in `N * T`.
    pub ladder: Vec<[usize; 2]>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Derivative orders whose errors are tracked, e.g. `[[1, 0]]`.
    #[serde(default)]
    pub alphas: Vec<Vec<usize>>,
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub eval_grid_per_dim: usize,
    #[serde(default = "default_margin")]
    pub eval_margin: f64,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
    #[serde(default)]
    pub output_json: Option<PathBuf>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn psi_family(&self) -> Family {
        self.psi_family.with_degree(self.psi_degree)
    }

    pub fn b_family(&self) -> Family {
        self.b_family.with_degree(self.b_degree)
    }

    pub fn alphas(&self) -> Vec<MultiIndex> {
        self.alphas.iter().cloned().map(MultiIndex).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!(
                "noise_sd must be finite and non-negative, got {}",
                self.noise_sd
            ));
        }
        if self.ladder.is_empty() {
            return bad("ladder is empty".into());
        }
        if self.ladder.iter().any(|[n, t]| *n == 0 || *t == 0) {
            return bad("ladder entries need N >= 1 and T >= 1".into());
        }
        let nts: Vec<usize> = self.ladder.iter().map(|[n, t]| n * t).collect();
        if nts.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("ladder must be strictly increasing in N*T, got {nts:?}"));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.p > 0.0) || !(self.multiplier > 0.0) {
            return bad("p and multiplier must be positive".into());
        }
        if self.select_multiplier {
            if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(*m > 0.0)) {
                return bad("multipliers must be a non-empty list of positive values".into());
            }
            if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
                return bad(format!(
                    "holdout_fraction must lie in (0, 1), got {}",
                    self.holdout_fraction
                ));
            }
            if self.ladder.iter().any(|[n, _]| *n < 2) {
                return bad("multiplier selection needs at least two trajectories per ladder point".into());
            }
        }
        if self.alphas.iter().any(|a| a.len() != 2) {
            return bad("every alpha must have one entry per state-action dimension (2)".into());
        }
        if self.eval_grid_per_dim < 2 {
            return bad("eval_grid_per_dim must be at least 2".into());
        }
        if !(0.0..0.5).contains(&self.eval_margin) {
            return bad(format!("eval_margin must lie in [0, 0.5), got {}", self.eval_margin));
        }
        Ok(())
    }
}
