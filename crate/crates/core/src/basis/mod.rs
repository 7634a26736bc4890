//! Tensor-product sieve bases over a rectangular state-action box.
//!
//! Columns are ordered lexicographically in the per-dimension indices with
//! the first dimension varying slowest, so for `counts = [m1, m2]` the column
//! of `(i1, i2)` is `i1 * m2 + i2`. State dimensions always come first, which
//! lets a row factor as `kron(state part, action part)`.

mod univariate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionIntegrand, PolicyDensity};
use crate::numerics::{symmetrize, BoxDomain, Matrix, QuadratureRule};

/// Highest supported tensor dimension.
pub const MAX_DIMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// Uniform clamped B-splines of the given degree.
    Bspline {
        degree: usize,
    },
    Cosine,
    Legendre,
}

impl Family {
    /// Smallest per-dimension count the family supports.
    pub fn min_count(&self) -> usize {
        match self {
            Family::Bspline { degree } => degree + 1,
            Family::Cosine | Family::Legendre => 1,
        }
    }
}

/// Derivative multi-index `alpha`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zero(dims: usize) -> Self {
        MultiIndex(vec![0; dims])
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: Family,
    /// Functions per dimension; `J` is their product.
    pub counts: Vec<usize>,
    pub domain: BoxDomain,
}

/// Empirical Gram matrix plus a flag raised when there were fewer points
/// than basis functions (rank deficiency is then expected, not an error).
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: Matrix,
    pub underdetermined: bool,
}

impl BasisSpec {
    pub fn new(family: Family, counts: Vec<usize>, domain: BoxDomain) -> Result<Self> {
        let spec = BasisSpec { family, counts, domain };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.counts.len();
        if d == 0 || d != self.domain.dim() {
            return Err(Error::input(format!(
                "basis has {} per-dimension counts but a {}-dimensional domain",
                d,
                self.domain.dim()
            )));
        }
        if d > MAX_DIMS {
            return Err(Error::capability(format!(
                "bases above {MAX_DIMS} dimensions are not supported (got {d})"
            )));
        }
        if let Family::Bspline { degree } = self.family {
            if degree == 0 {
                return Err(Error::input("B-spline degree must be at least 1"));
            }
        }
        let min = self.family.min_count();
        if let Some(&bad) = self.counts.iter().find(|&&m| m < min) {
            return Err(Error::input(format!(
                "per-dimension count {bad} is below the minimum {min} for {:?}",
                self.family
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    /// Total number of basis functions `J`.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column index of a per-dimension multi-index.
    pub fn column_of(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims());
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &m)| acc * m + i)
    }

    /// Inverse of [`BasisSpec::column_of`].
    pub fn multi_index_of(&self, mut col: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for k in (0..self.dims()).rev() {
            idx[k] = col % self.counts[k];
            col /= self.counts[k];
        }
        idx
    }

    /// The basis restricted to dimensions `range` (a tensor factor).
    pub fn factor(&self, range: std::ops::Range<usize>) -> BasisSpec {
        BasisSpec {
            family: self.family,
            counts: self.counts[range.clone()].to_vec(),
            domain: BoxDomain {
                lo: self.domain.lo[range.clone()].to_vec(),
                hi: self.domain.hi[range].to_vec(),
            },
        }
    }

    /// Largest total derivative order the family supports.
    pub fn max_derivative_order(&self) -> usize {
        match self.family {
            Family::Bspline { degree } => degree - 1,
            Family::Cosine | Family::Legendre => usize::MAX,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if !self.domain.contains(x) {
            return Err(Error::input(format!(
                "point {x:?} lies outside the basis domain [{:?}, {:?}]",
                self.domain.lo, self.domain.hi
            )));
        }
        Ok(())
    }

    fn check_alpha(&self, alpha: &MultiIndex) -> Result<()> {
        if alpha.0.len() != self.dims() {
            return Err(Error::input(format!(
                "derivative index has {} entries, basis has {} dimensions",
                alpha.0.len(),
                self.dims()
            )));
        }
        if alpha.order() > self.max_derivative_order() {
            return Err(Error::capability(format!(
                "derivative order {} exceeds the smoothness of {:?} (max {})",
                alpha.order(),
                self.family,
                self.max_derivative_order()
            )));
        }
        Ok(())
    }

    fn univariate(&self, k: usize, x: f64, order: usize, out: &mut [f64]) {
        let (lo, hi, m) = (self.domain.lo[k], self.domain.hi[k], self.counts[k]);
        match self.family {
            Family::Bspline { degree } => univariate::bspline(degree, m, lo, hi, x, order, out),
            Family::Cosine => univariate::cosine(m, lo, hi, x, order, out),
            Family::Legendre => univariate::legendre(m, lo, hi, x, order, out),
        }
    }

    /// Writes `d^alpha psi(x)` into `out` (length `J`) without validation.
    pub(crate) fn row_into(&self, x: &[f64], alpha: Option<&[usize]>, out: &mut [f64]) {
        let mut factors: Vec<Vec<f64>> = Vec::with_capacity(self.dims());
        for k in 0..self.dims() {
            let mut v = vec![0.0; self.counts[k]];
            self.univariate(k, x[k], alpha.map_or(0, |a| a[k]), &mut v);
            factors.push(v);
        }
        kron_into(&factors, out);
    }

    /// `psi^J(x)` for a single point.
    pub fn row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.len()];
        self.row_into(x, None, &mut out);
        Ok(out)
    }

    /// `n x J` matrix whose row `i` is `psi^J(points[i])`.
    pub fn eval(&self, points: &[Vec<f64>]) -> Result<Matrix> {
        self.eval_deriv(points, &MultiIndex::zero(self.dims()))
    }

    /// `n x J` matrix whose row `i` is `d^alpha psi^J(points[i])`.
    pub fn eval_deriv(&self, points: &[Vec<f64>], alpha: &MultiIndex) -> Result<Matrix> {
        self.validate()?;
        self.check_alpha(alpha)?;
        for p in points {
            self.check_point(p)?;
        }
        let j = self.len();
        let a = if alpha.is_zero() {
            None
        } else {
            Some(alpha.0.as_slice())
        };
        let mut m = Matrix::zeros(points.len(), j);
        let mut buf = vec![0.0; j];
        for (i, p) in points.iter().enumerate() {
            self.row_into(p, a, &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                m[(i, c)] = v;
            }
        }
        Ok(m)
    }

    /// Rows of `psi^J_pi(s) = int pi(a|s) psi^J(s, a) da`, one per state.
    ///
    /// The action dimensions are the trailing `dims - state_dims` ones. A
    /// point-mass policy is evaluated directly at its location.
    pub fn policy_rows(&self, policy: &PolicyDensity, states: &[Vec<f64>], rule: &QuadratureRule) -> Result<Matrix> {
        let ds = match states.first() {
            Some(s) => s.len(),
            None => return Ok(Matrix::zeros(0, self.len())),
        };
        if ds == 0 || ds >= self.dims() {
            return Err(Error::input(format!(
                "state dimension {ds} incompatible with a {}-dimensional basis",
                self.dims()
            )));
        }
        let state_part = self.factor(0..ds);
        let action_part = self.factor(ds..self.dims());
        if rule.domain.dim() != action_part.dims() {
            return Err(Error::input("quadrature rule does not match the action dimensions"));
        }
        if let Some(bad) = rule.nodes.iter().find(|a| !action_part.domain.contains(a)) {
            return Err(Error::input(format!(
                "quadrature node {bad:?} lies outside the action part of the basis domain"
            )));
        }
        // Action rows at every node, shared by all states.
        let ja = action_part.len();
        let node_rows: Vec<Vec<f64>> = rule
            .nodes
            .iter()
            .map(|a| {
                let mut r = vec![0.0; ja];
                action_part.row_into(a, None, &mut r);
                r
            })
            .collect();

        let j = self.len();
        let mut out = Matrix::zeros(states.len(), j);
        let mut srow = vec![0.0; state_part.len()];
        let mut arow = vec![0.0; ja];
        for (i, s) in states.iter().enumerate() {
            state_part.check_point(s)?;
            state_part.row_into(s, None, &mut srow);
            match policy.action_integrand(s, rule)? {
                ActionIntegrand::Point(a0) => {
                    action_part.check_point(&a0)?;
                    action_part.row_into(&a0, None, &mut arow);
                }
                ActionIntegrand::Weights(w) => {
                    arow.iter_mut().for_each(|v| *v = 0.0);
                    for (wl, r) in w.iter().zip(&node_rows) {
                        if *wl == 0.0 {
                            continue;
                        }
                        for (acc, v) in arow.iter_mut().zip(r) {
                            *acc += wl * v;
                        }
                    }
                }
            }
            for (si, sv) in srow.iter().enumerate() {
                for (ai, av) in arow.iter().enumerate() {
                    out[(i, si * ja + ai)] = sv * av;
                }
            }
        }
        Ok(out)
    }

    /// Empirical Gram `(1/n) sum psi psi^T` over the given points.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<Gram> {
        if points.is_empty() {
            return Err(Error::input("gram matrix needs at least one point"));
        }
        let psi = self.eval(points)?;
        let matrix = symmetrize(&(psi.transpose() * &psi / points.len() as f64));
        Ok(Gram {
            matrix,
            underdetermined: points.len() < self.len(),
        })
    }
}

/// Kronecker product of vectors, first factor varying slowest.
pub(crate) fn kron_into(factors: &[Vec<f64>], out: &mut [f64]) {
    let mut len = 1;
    out[0] = 1.0;
    for f in factors {
        let m = f.len();
        // expand in place from the back so earlier entries are not clobbered
        for i in (0..len).rev() {
            let base = out[i];
            for (k, &v) in f.iter().enumerate().rev() {
                out[i * m + k] = base * v;
            }
        }
        len *= m;
    }
}

/// Free-function form of [`BasisSpec::eval`].
pub fn eval_basis(spec: &BasisSpec, points: &[Vec<f64>]) -> Result<Matrix> {
    spec.eval(points)
}

/// Free-function form of [`BasisSpec::eval_deriv`].
pub fn eval_basis_deriv(spec: &BasisSpec, points: &[Vec<f64>], alpha: &MultiIndex) -> Result<Matrix> {
    spec.eval_deriv(points, alpha)
}

/// Free-function form of [`BasisSpec::policy_rows`].
pub fn policy_basis(
    spec: &BasisSpec,
    policy: &PolicyDensity,
    states: &[Vec<f64>],
    rule: &QuadratureRule,
) -> Result<Matrix> {
    spec.policy_rows(policy, states, rule)
}

/// Free-function form of [`BasisSpec::gram`].
pub fn gram_matrix(spec: &BasisSpec, points: &[Vec<f64>]) -> Result<Gram> {
    spec.gram(points)
}

#[cfg(test)]
mod tests;
