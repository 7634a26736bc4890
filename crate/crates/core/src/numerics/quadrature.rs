use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[lo_1, hi_1] x ... x [lo_k, hi_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = BoxDomain { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        BoxDomain {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::input(format!(
                "box bounds have mismatched or zero dimension ({} vs {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (k, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && h > l) {
                return Err(Error::input(format!("degenerate box in dimension {k}: [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    /// Cartesian product `self x other`, dimensions of `self` first.
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        BoxDomain { lo, hi }
    }

    /// The box shrunk by `fraction` of each width on every side.
    pub fn shrink(&self, fraction: f64) -> BoxDomain {
        let lo = (0..self.dim()).map(|k| self.lo[k] + fraction * self.width(k)).collect();
        let hi = (0..self.dim()).map(|k| self.hi[k] - fraction * self.width(k)).collect();
        BoxDomain { lo, hi }
    }

    /// Tensor grid with `per_dim` equispaced points per axis including the
    /// endpoints; first coordinate varies slowest.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| {
                if per_dim == 1 {
                    vec![0.5 * (self.lo[k] + self.hi[k])]
                } else {
                    (0..per_dim)
                        .map(|i| self.lo[k] + self.width(k) * i as f64 / (per_dim - 1) as f64)
                        .collect()
                }
            })
            .collect();
        cartesian(&axes)
    }
}

pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A cubature rule: nodes inside a box with positive weights summing to the
/// box volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub domain: BoxDomain,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensor-product Gauss–Legendre rule, exact for polynomials of degree
    /// `<= 2 * nodes_per_dim - 1` in each variable.
    pub fn tensor_gauss(domain: &BoxDomain, nodes_per_dim: usize) -> Result<Self> {
        Self::composite_gauss(domain, 1, nodes_per_dim)
    }

    /// Composite rule: each axis split into `panels` equal panels, each
    /// carrying a Gauss–Legendre rule with `nodes_per_panel` nodes.
    pub fn composite_gauss(domain: &BoxDomain, panels: usize, nodes_per_panel: usize) -> Result<Self> {
        domain.validate()?;
        if panels == 0 || nodes_per_panel == 0 {
            return Err(Error::input("quadrature needs at least one panel and one node"));
        }
        let (x, w) = gauss_legendre(nodes_per_panel);
        let mut axes_x = Vec::with_capacity(domain.dim());
        let mut axes_w = Vec::with_capacity(domain.dim());
        for k in 0..domain.dim() {
            let h = domain.width(k) / panels as f64;
            let mut ax = Vec::with_capacity(panels * nodes_per_panel);
            let mut aw = Vec::with_capacity(panels * nodes_per_panel);
            for p in 0..panels {
                let a = domain.lo[k] + p as f64 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    ax.push(a + 0.5 * h * (xi + 1.0));
                    aw.push(0.5 * h * wi);
                }
            }
            axes_x.push(ax);
            axes_w.push(aw);
        }
        let nodes = cartesian(&axes_x);
        let weights = cartesian(&axes_w).into_iter().map(|ws| ws.iter().product()).collect();
        Ok(QuadratureRule {
            domain: domain.clone(),
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Free-function form of [`QuadratureRule::tensor_gauss`].
pub fn tensor_gauss_rule(domain: &BoxDomain, nodes_per_dim: usize) -> Result<QuadratureRule> {
    QuadratureRule::tensor_gauss(domain, nodes_per_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn midpoint_rule() {
        let r = tensor_gauss_rule(&BoxDomain::unit(1), 1).unwrap();
        assert_eq!(r.nodes, vec![vec![0.5]]);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_nodes_integrate_cubic_exactly() {
        let r = tensor_gauss_rule(&BoxDomain::unit(1), 2).unwrap();
        let v = r.integrate(|x| x[0].powi(3));
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sine_product_on_square() {
        let r = tensor_gauss_rule(&BoxDomain::unit(2), 16).unwrap();
        let v = r.integrate(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
        assert!((v - 4.0 / (PI * PI)).abs() < 1e-12);
    }

    #[test]
    fn exactness_degree() {
        for n in 1..12 {
            let r = tensor_gauss_rule(&BoxDomain::new(vec![-1.0], vec![2.0]).unwrap(), n).unwrap();
            let deg = 2 * n - 1;
            let exact = (2f64.powi(deg as i32 + 1) - (-1f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
            let v = r.integrate(|x| x[0].powi(deg as i32));
            assert!((v - exact).abs() < 1e-11 * exact.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn weights_positive_and_sum_to_volume() {
        let b = BoxDomain::new(vec![-0.5, 1.0, 0.0], vec![1.5, 4.0, 0.25]).unwrap();
        for n in [1, 3, 8] {
            for panels in [1, 4] {
                let r = QuadratureRule::composite_gauss(&b, panels, n).unwrap();
                assert!(r.weights.iter().all(|&w| w > 0.0));
                let s: f64 = r.weights.iter().sum();
                assert!((s - b.volume()).abs() <= 1e-12 * b.volume());
                assert!(r.nodes.iter().all(|x| b.contains(x)));
            }
        }
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let b = BoxDomain {
            lo: vec![0.0],
            hi: vec![0.0],
        };
        assert!(matches!(tensor_gauss_rule(&b, 3), Err(Error::Input(_))));
    }
}
