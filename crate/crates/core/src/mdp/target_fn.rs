use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, MultiIndex};
use crate::error::{Error, Result};
use crate::numerics::BoxDomain;

/// Kink locations of the benchmark function's `C^{1,1}` terms.
pub const BENCHMARK_KINK_S: f64 = 0.4137;
pub const BENCHMARK_KINK_A: f64 = 0.6180;
const BENCHMARK_COEF_S: f64 = 0.8;
const BENCHMARK_COEF_A: f64 = 0.6;

/// Closed-form functions of `x = (s, a)` used as designed Q-functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetFn {
    Constant {
        value: f64,
    },
    /// `sin(pi s) cos(pi a / 2)` on a two-dimensional box.
    SinCos,
    /// `sin(pi s) cos(pi a / 2) + 0.8 (s - 0.4137)_+^2 + 0.6 (a - 0.618)_+^2`.
    ///
    /// The truncated quadratics have bounded but discontinuous second
    /// derivatives, so the function has Hölder smoothness exactly 2.
    Benchmark,
    /// `psi^J(x)^T c`; lies in the sieve space by construction.
    Series {
        basis: BasisSpec,
        coefficients: Vec<f64>,
    },
}

/// `d^order/dx^order of c (x - k)_+^2`.
fn truncated_square(x: f64, kink: f64, coef: f64, order: usize) -> f64 {
    let u = x - kink;
    if u <= 0.0 {
        return 0.0;
    }
    coef * match order {
        0 => u * u,
        1 => 2.0 * u,
        2 => 2.0,
        _ => 0.0,
    }
}

fn sin_deriv(x: f64, order: usize) -> f64 {
    PI.powi(order as i32) * (PI * x + order as f64 * PI / 2.0).sin()
}

fn half_cos_deriv(x: f64, order: usize) -> f64 {
    (PI / 2.0).powi(order as i32) * (PI * x / 2.0 + order as f64 * PI / 2.0).cos()
}

impl TargetFn {
    pub fn validate(&self, dims: usize) -> Result<()> {
        match self {
            TargetFn::Constant { value } if !value.is_finite() => Err(Error::input("constant target must be finite")),
            TargetFn::SinCos | TargetFn::Benchmark if dims != 2 => Err(Error::input(format!(
                "{self:?} is defined on two dimensions, got {dims}"
            ))),
            TargetFn::Series { basis, coefficients } => {
                basis.validate()?;
                if basis.dims() != dims || coefficients.len() != basis.len() {
                    return Err(Error::input("series target does not match its basis"));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::input("series target has non-finite coefficients"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TargetFn::Constant { value } => *value,
            TargetFn::SinCos => (PI * x[0]).sin() * (PI * x[1] / 2.0).cos(),
            TargetFn::Benchmark => {
                (PI * x[0]).sin() * (PI * x[1] / 2.0).cos()
                    + truncated_square(x[0], BENCHMARK_KINK_S, BENCHMARK_COEF_S, 0)
                    + truncated_square(x[1], BENCHMARK_KINK_A, BENCHMARK_COEF_A, 0)
            }
            TargetFn::Series { basis, coefficients } => {
                let mut row = vec![0.0; basis.len()];
                basis.row_into(x, None, &mut row);
                row.iter().zip(coefficients).map(|(b, c)| b * c).sum()
            }
        }
    }

    /// `d^alpha` of the function (almost everywhere for the kinked terms).
    pub fn deriv(&self, x: &[f64], alpha: &MultiIndex) -> Result<f64> {
        if alpha.is_zero() {
            return Ok(self.value(x));
        }
        let a = &alpha.0;
        Ok(match self {
            TargetFn::Constant { .. } => 0.0,
            TargetFn::SinCos => sin_deriv(x[0], a[0]) * half_cos_deriv(x[1], a[1]),
            TargetFn::Benchmark => {
                let smooth = sin_deriv(x[0], a[0]) * half_cos_deriv(x[1], a[1]);
                let ks = if a[1] == 0 {
                    truncated_square(x[0], BENCHMARK_KINK_S, BENCHMARK_COEF_S, a[0])
                } else {
                    0.0
                };
                let ka = if a[0] == 0 {
                    truncated_square(x[1], BENCHMARK_KINK_A, BENCHMARK_COEF_A, a[1])
                } else {
                    0.0
                };
                smooth + ks + ka
            }
            TargetFn::Series { basis, coefficients } => {
                let m = basis.eval_deriv(&[x.to_vec()], alpha)?;
                m.row(0).iter().zip(coefficients).map(|(b, c)| b * c).sum()
            }
        })
    }

    /// Upper bound on `sup |f|` over `domain` (analytic where available,
    /// otherwise a fine-grid maximum).
    pub fn sup_bound(&self, domain: &BoxDomain) -> f64 {
        match self {
            TargetFn::Constant { value } => value.abs(),
            TargetFn::SinCos => 1.0,
            TargetFn::Benchmark => {
                let s_hi = domain.hi[0].abs().max(domain.lo[0].abs()) + BENCHMARK_KINK_S;
                let a_hi = domain.hi[1].abs().max(domain.lo[1].abs()) + BENCHMARK_KINK_A;
                1.0 + BENCHMARK_COEF_S * s_hi * s_hi + BENCHMARK_COEF_A * a_hi * a_hi
            }
            TargetFn::Series { coefficients, basis } => match basis.family {
                // B-splines form a partition of unity.
                crate::basis::Family::Bspline { .. } => coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs())),
                // |cos| <= 1 and |P_k| <= 1 on the reference interval.
                family => coefficients
                    .iter()
                    .enumerate()
                    .map(|(col, c)| {
                        let bound: f64 = basis
                            .multi_index_of(col)
                            .iter()
                            .map(|&i| match (family, i) {
                                (_, 0) => 1.0,
                                (crate::basis::Family::Cosine, _) => 2f64.sqrt(),
                                _ => ((2 * i + 1) as f64).sqrt(),
                            })
                            .product();
                        c.abs() * bound
                    })
                    .sum(),
            },
        }
    }
}
