use std::ops::Range;

use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::mdp::{Dataset, PolicyDensity};
use crate::numerics::{Matrix, QuadratureRule, Vector};

/// Largest accepted ratio `K / J` unless the caller overrides it.
pub const DEFAULT_K_RATIO: f64 = 2.0;

/// Checks `J <= K <= c J` and that both bases live on the same box.
pub fn check_bases(psi: &BasisSpec, b: &BasisSpec, k_ratio: f64) -> Result<()> {
    psi.validate()?;
    b.validate()?;
    if psi.dims() != b.dims() {
        return Err(Error::config(format!(
            "psi has {} dimensions but b has {}",
            psi.dims(),
            b.dims()
        )));
    }
    let (j, k) = (psi.len(), b.len());
    if k < j {
        return Err(Error::config(format!("instrument basis has K = {k} < J = {j}")));
    }
    if !(k_ratio >= 1.0) || k as f64 > k_ratio * j as f64 {
        return Err(Error::config(format!(
            "K = {k} exceeds {k_ratio} x J = {}",
            k_ratio * j as f64
        )));
    }
    Ok(())
}

/// The stacked sieve matrices for one dataset, rows in `(i, t)` order.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    /// `Psi`: `NT x J`, rows `psi^J(s, a)`.
    pub psi: Matrix,
    /// `B`: `NT x K`, rows `b^K(s, a)`.
    pub b: Matrix,
    /// `G_pi`: `NT x J`, rows `psi^J_pi(s')`.
    pub g_pi: Matrix,
    pub rewards: Vector,
    pub gamma: f64,
    pub psi_spec: BasisSpec,
    pub b_spec: BasisSpec,
}

impl AssembledSystem {
    /// `Gamma_pi = Psi - gamma G_pi`.
    pub fn gamma_pi(&self) -> Matrix {
        &self.psi - &self.g_pi * self.gamma
    }

    pub fn rows(&self) -> usize {
        self.psi.nrows()
    }

    pub fn moments(&self) -> Moments {
        Moments::from_rows(&self.b, &self.gamma_pi(), &self.rewards)
    }
}

/// Sufficient statistics of the 2SLS solve: `B'B`, `B'Gamma`, `B'R`, `R'R`
/// and the row count. Sums over disjoint row sets add.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub btb: Matrix,
    pub btg: Matrix,
    pub btr: Vector,
    pub rtr: f64,
}

impl Moments {
    pub fn zeros(k: usize, j: usize) -> Self {
        Moments {
            n: 0,
            btb: Matrix::zeros(k, k),
            btg: Matrix::zeros(k, j),
            btr: Vector::zeros(k),
            rtr: 0.0,
        }
    }

    pub fn from_rows(b: &Matrix, gamma_pi: &Matrix, r: &Vector) -> Self {
        let bt = b.transpose();
        Moments {
            n: b.nrows(),
            btb: &bt * b,
            btg: &bt * gamma_pi,
            btr: &bt * r,
            rtr: r.dot(r),
        }
    }

    pub fn add(&mut self, other: &Moments) {
        self.n += other.n;
        self.btb += &other.btb;
        self.btg += &other.btg;
        self.btr += &other.btr;
        self.rtr += other.rtr;
    }

    /// Ordered sum of a list of moments.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a Moments>, k: usize, j: usize) -> Moments {
        let mut acc = Moments::zeros(k, j);
        for p in parts {
            acc.add(p);
        }
        acc
    }
}

/// Everything [`assemble`] needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct SieveSetup<'a> {
    pub psi: &'a BasisSpec,
    pub b: &'a BasisSpec,
    pub target: &'a PolicyDensity,
    pub gamma: f64,
    /// Rule over the action box for `psi^J_pi`.
    pub rule: &'a QuadratureRule,
    pub k_ratio: f64,
}

impl<'a> SieveSetup<'a> {
    pub fn new(
        psi: &'a BasisSpec,
        b: &'a BasisSpec,
        target: &'a PolicyDensity,
        gamma: f64,
        rule: &'a QuadratureRule,
    ) -> Self {
        SieveSetup {
            psi,
            b,
            target,
            gamma,
            rule,
            k_ratio: DEFAULT_K_RATIO,
        }
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        check_bases(self.psi, self.b, self.k_ratio)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::input(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        if ds.state_dim + ds.action_dim != self.psi.dims() {
            return Err(Error::input(format!(
                "data has {} state + {} action dimensions, basis has {}",
                ds.state_dim,
                ds.action_dim,
                self.psi.dims()
            )));
        }
        Ok(())
    }

    /// Rows for the tuples in `range`: `(Psi, B, G_pi, R)`.
    fn block(&self, ds: &Dataset, range: Range<usize>) -> Result<(Matrix, Matrix, Matrix, Vector)> {
        let tuples = &ds.tuples[range];
        let sa: Vec<Vec<f64>> = tuples.iter().map(|x| crate::mdp::concat(&x.s, &x.a)).collect();
        let sn: Vec<Vec<f64>> = tuples.iter().map(|x| x.s_next.clone()).collect();
        let psi = self.psi.eval(&sa)?;
        let b = if self.b == self.psi {
            psi.clone()
        } else {
            self.b.eval(&sa)?
        };
        let g = self.psi.policy_rows(self.target, &sn, self.rule)?;
        let r = Vector::from_iterator(tuples.len(), tuples.iter().map(|x| x.r));
        Ok((psi, b, g, r))
    }

    fn block_moments(&self, ds: &Dataset, range: Range<usize>) -> Result<Moments> {
        let (psi, b, g, r) = self.block(ds, range)?;
        Ok(Moments::from_rows(&b, &(psi - g * self.gamma), &r))
    }
}

/// Rows per parallel assembly block.
const BLOCK_ROWS: usize = 2048;

/// Builds `Psi`, `B`, `G_pi` and `R` with rows in `(i, t)` order.
pub fn assemble(ds: &Dataset, setup: &SieveSetup) -> Result<AssembledSystem> {
    setup.check(ds)?;
    let n = ds.len();
    let blocks: Vec<_> = (0..n.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|k| setup.block(ds, k * BLOCK_ROWS..((k + 1) * BLOCK_ROWS).min(n)))
        .collect::<Result<_>>()?;
    let (j, kk) = (setup.psi.len(), setup.b.len());
    let mut psi = Matrix::zeros(n, j);
    let mut b = Matrix::zeros(n, kk);
    let mut g_pi = Matrix::zeros(n, j);
    let mut rewards = Vector::zeros(n);
    let mut row = 0;
    for (bp, bb, bg, br) in blocks {
        let m = bp.nrows();
        psi.rows_mut(row, m).copy_from(&bp);
        b.rows_mut(row, m).copy_from(&bb);
        g_pi.rows_mut(row, m).copy_from(&bg);
        rewards.rows_mut(row, m).copy_from(&br);
        row += m;
    }
    Ok(AssembledSystem {
        psi,
        b,
        g_pi,
        rewards,
        gamma: setup.gamma,
        psi_spec: setup.psi.clone(),
        b_spec: setup.b.clone(),
    })
}

/// Moments of the whole dataset without materializing the `NT`-row
/// matrices. Blocks are summed in row order, so the result does not depend
/// on the thread count.
pub fn dataset_moments(ds: &Dataset, setup: &SieveSetup) -> Result<Moments> {
    setup.check(ds)?;
    let n = ds.len();
    let parts: Vec<Moments> = (0..n.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|k| setup.block_moments(ds, k * BLOCK_ROWS..((k + 1) * BLOCK_ROWS).min(n)))
        .collect::<Result<_>>()?;
    Ok(Moments::sum(&parts, setup.b.len(), setup.psi.len()))
}

/// One set of moments per trajectory, for resampling trajectories.
pub fn trajectory_moments(ds: &Dataset, setup: &SieveSetup) -> Result<Vec<Moments>> {
    setup.check(ds)?;
    (0..ds.n_traj)
        .into_par_iter()
        .map(|i| setup.block_moments(ds, i * ds.horizon..(i + 1) * ds.horizon))
        .collect()
}
