use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::BoxDomain;

use super::StreamRng;

/// Product of independent truncated Gaussians on a box, with means affine
/// in a conditioning vector: `mean_k(x) = intercept_k + sum_j slopes[k][j] x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTruncatedGaussian {
    pub intercept: Vec<f64>,
    pub slopes: Vec<Vec<f64>>,
    pub sd: Vec<f64>,
    pub support: BoxDomain,
}

impl AffineTruncatedGaussian {
    pub fn new(intercept: Vec<f64>, slopes: Vec<Vec<f64>>, sd: Vec<f64>, support: BoxDomain) -> Result<Self> {
        support.validate()?;
        let d = support.dim();
        if intercept.len() != d || slopes.len() != d || sd.len() != d {
            return Err(Error::input(
                "truncated Gaussian: intercept, slopes and sd must match the support dimension",
            ));
        }
        if let Some(s) = sd.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::input(format!("truncated Gaussian: bad sd {s}")));
        }
        let width = slopes[0].len();
        if slopes.iter().any(|r| r.len() != width) {
            return Err(Error::input("truncated Gaussian: ragged slope matrix"));
        }
        Ok(AffineTruncatedGaussian {
            intercept,
            slopes,
            sd,
            support,
        })
    }

    pub fn conditioning_dim(&self) -> usize {
        self.slopes[0].len()
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        self.intercept
            .iter()
            .zip(&self.slopes)
            .map(|(c, row)| c + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("standard normal")
    }

    pub fn density(&self, y: &[f64], x: &[f64]) -> f64 {
        if !self.support.contains(y) {
            return 0.0;
        }
        let n = Self::std_normal();
        let mean = self.mean(x);
        let mut dens = 1.0;
        for k in 0..y.len() {
            let sd = self.sd[k];
            let z = (y[k] - mean[k]) / sd;
            let mass = n.cdf((self.support.hi[k] - mean[k]) / sd) - n.cdf((self.support.lo[k] - mean[k]) / sd);
            dens *= (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt() * mass);
        }
        dens
    }

    pub fn sample(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let mean = self.mean(x);
        (0..mean.len())
            .map(|k| {
                let (lo, hi, m, sd) = (self.support.lo[k], self.support.hi[k], mean[k], self.sd[k]);
                for _ in 0..64 {
                    let z: f64 = rng.sample(StandardNormal);
                    let v = m + sd * z;
                    if v >= lo && v <= hi {
                        return v;
                    }
                }
                // Rare: far-out mean. Inverse-CDF on the truncated range.
                let n = Self::std_normal();
                let (a, b) = (n.cdf((lo - m) / sd), n.cdf((hi - m) / sd));
                let u: f64 = rng.random_range(0.0..1.0);
                (m + sd * n.inverse_cdf(a + u * (b - a))).clamp(lo, hi)
            })
            .collect()
    }
}
