use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MultiIndex;
use crate::error::{Error, Result};
use crate::mdp::recipes::{self, Lab};
use crate::mdp::{sample_trajectories, DiscreteModel, InitialDist};
use crate::npiv::{
    bellman_residual_norms, dataset_moments, fit_moments, plugin_value, predict_q_deriv, select_multiplier,
    SieveDesign, SieveFit, SieveSetup,
};
use crate::numerics::{SeededStream, DEFAULT_RTOL};

use super::config::StudyConfig;
use super::slope::{fit_loglog_slope, Slope};

/// Version of the JSON result layout.
pub const SCHEMA_VERSION: u32 = 1;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Errors of one derivative order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivError {
    pub alpha: MultiIndex,
    pub sup_err: f64,
    pub l2_err: f64,
}

/// Outcome of one replication at one ladder point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub ladder_index: usize,
    pub replication: usize,
    pub n: usize,
    pub t: usize,
    pub nt: usize,
    pub seed: u64,
    pub multiplier: f64,
    pub j: usize,
    pub k: usize,
    pub sup_err: f64,
    pub l2_err: f64,
    pub deriv: Vec<DerivError>,
    pub bellman_sup: f64,
    pub bellman_l2: f64,
    /// `v_hat - v` for a uniform initial state.
    pub value_err: f64,
    pub wall_time_s: f64,
    /// Set when the replication failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

/// A fitted rate for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSlope {
    pub metric: String,
    /// `nt` or `nt_over_log_nt`.
    pub x_axis: String,
    pub slope: f64,
    pub stderr: f64,
    /// `(x, mean error)` per ladder point.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub records: Vec<ReplicationRecord>,
    /// Empty when the ladder has fewer than four points.
    pub slopes: Vec<MetricSlope>,
    pub failed: usize,
}

/// Everything shared by the replications of a study.
struct EvalContext {
    lab: Lab,
    design: SieveDesign,
    alphas: Vec<MultiIndex>,
    grid: Vec<Vec<f64>>,
    /// `d^alpha Q*` on `grid`, index 0 is `alpha = 0`.
    truth_grid: Vec<Vec<f64>>,
    l2_points: Vec<Vec<f64>>,
    l2_weights: Vec<f64>,
    truth_l2: Vec<Vec<f64>>,
    value: f64,
}

impl EvalContext {
    fn new(cfg: &StudyConfig) -> Result<Self> {
        let lab = recipes::build(cfg.recipe, cfg.gamma, cfg.noise_sd)?;
        let domain = lab.mdp.joint_box();
        let design = SieveDesign {
            psi_family: cfg.psi_family(),
            b_family: cfg.b_family(),
            b_extra: cfg.b_extra,
            p: cfg.p,
            norm: cfg.j_rule,
            domain: domain.clone(),
        };
        let mut alphas = vec![MultiIndex::zero(domain.dim())];
        alphas.extend(cfg.alphas());
        let interior = domain.shrink(cfg.eval_margin);
        let grid = interior.grid(cfg.eval_grid_per_dim);
        // L2 weights: stationary mass of the quadrature-node chain.
        let model = DiscreteModel::new(&lab.mdp, &lab.behavior, &lab.target, &lab.state_rule, &lab.action_rule)?;
        let (l2_points, l2_weights): (Vec<_>, Vec<_>) = model
            .points()
            .into_iter()
            .zip(model.mass.iter().copied())
            .filter(|(p, _)| interior.contains(p))
            .unzip();
        let truth = |pts: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
            alphas
                .iter()
                .map(|a| pts.iter().map(|x| lab.q_star.deriv(x, a)).collect())
                .collect()
        };
        let truth_grid = truth(&grid)?;
        let truth_l2 = truth(&l2_points)?;
        let value = InitialDist::Uniform.integrate(&lab.state_rule, |s| {
            lab.target
                .integrate(s, &lab.action_rule, |a| lab.q_star.value(&crate::mdp::concat(s, a)))
        })?;
        Ok(EvalContext {
            lab,
            design,
            alphas,
            grid,
            truth_grid,
            l2_points,
            l2_weights,
            truth_l2,
            value,
        })
    }

    /// `(sup, L2)` error of `d^alpha Q_hat` for alpha index `k`.
    fn errors(&self, fit: &SieveFit, k: usize) -> Result<(f64, f64)> {
        let a = &self.alphas[k];
        let on_grid = predict_q_deriv(fit, &self.grid, a)?;
        let sup = on_grid
            .iter()
            .zip(&self.truth_grid[k])
            .fold(0.0f64, |m, (q, t)| m.max((q - t).abs()));
        let on_nodes = predict_q_deriv(fit, &self.l2_points, a)?;
        let total: f64 = self.l2_weights.iter().sum();
        let l2 = (on_nodes
            .iter()
            .zip(&self.truth_l2[k])
            .zip(&self.l2_weights)
            .map(|((q, t), w)| w * (q - t).powi(2))
            .sum::<f64>()
            / total)
            .sqrt();
        Ok((sup, l2))
    }
}

fn replication_seed(cfg: &StudyConfig, ladder_index: usize, replication: usize) -> u64 {
    SeededStream::new(cfg.seed, ladder_index as u64).derive(replication as u64)
}

fn run_one(cfg: &StudyConfig, ctx: &EvalContext, ladder_index: usize, replication: usize) -> ReplicationRecord {
    let [n, t] = cfg.ladder[ladder_index];
    let seed = replication_seed(cfg, ladder_index, replication);
    let start = Instant::now();
    let mut rec = ReplicationRecord {
        ladder_index,
        replication,
        n,
        t,
        nt: n * t,
        seed,
        multiplier: f64::NAN,
        j: 0,
        k: 0,
        sup_err: f64::NAN,
        l2_err: f64::NAN,
        deriv: Vec::new(),
        bellman_sup: f64::NAN,
        bellman_l2: f64::NAN,
        value_err: f64::NAN,
        wall_time_s: 0.0,
        error: None,
    };
    if let Err(e) = fill(cfg, ctx, &mut rec) {
        rec.error = Some(e.to_string());
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

fn fill(cfg: &StudyConfig, ctx: &EvalContext, rec: &mut ReplicationRecord) -> Result<()> {
    let lab = &ctx.lab;
    let ds = sample_trajectories(&lab.mdp, &lab.behavior, rec.n, rec.t, cfg.burn_in, rec.seed)?;
    let multiplier = if cfg.select_multiplier {
        let n_hold = ((rec.n as f64 * cfg.holdout_fraction).round() as usize).clamp(1, rec.n - 1);
        let train = ds.take_trajectories(rec.n - n_hold);
        let holdout = ds.select_trajectories(&((rec.n - n_hold)..rec.n).collect::<Vec<_>>());
        select_multiplier(
            &train,
            &holdout,
            &ctx.design,
            &cfg.multipliers,
            &lab.target,
            cfg.gamma,
            &lab.action_rule,
        )?
        .multiplier
    } else {
        cfg.multiplier
    };
    let (psi, b, _) = ctx.design.bases(rec.nt, multiplier)?;
    let setup = SieveSetup::new(&psi, &b, &lab.target, cfg.gamma, &lab.action_rule);
    let fit = fit_moments(&dataset_moments(&ds, &setup)?, &psi, &b, cfg.gamma, DEFAULT_RTOL)?;
    rec.multiplier = multiplier;
    rec.j = psi.len();
    rec.k = b.len();
    (rec.sup_err, rec.l2_err) = ctx.errors(&fit, 0)?;
    rec.deriv = (1..ctx.alphas.len())
        .map(|k| {
            ctx.errors(&fit, k).map(|(sup_err, l2_err)| DerivError {
                alpha: ctx.alphas[k].clone(),
                sup_err,
                l2_err,
            })
        })
        .collect::<Result<_>>()?;
    let res = bellman_residual_norms(
        &fit,
        &lab.mdp,
        &lab.target,
        &ctx.l2_points,
        Some(&ctx.l2_weights),
        &lab.state_rule,
        &lab.action_rule,
    )?;
    rec.bellman_sup = res.sup;
    rec.bellman_l2 = res.l2;
    rec.value_err = plugin_value(
        &fit,
        &lab.target,
        &InitialDist::Uniform,
        &lab.state_rule,
        &lab.action_rule,
    )? - ctx.value;
    Ok(())
}

/// Runs every `(ladder point, replication)` pair and fits rates.
///
/// Work runs on a rayon pool (`cfg.threads`, or the global pool); records
/// are ordered by ladder index then replication, so the output does not
/// depend on the thread count.
pub fn run_study(cfg: &StudyConfig) -> Result<RateStudyResult> {
    cfg.validate()?;
    let ctx = EvalContext::new(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.ladder.len())
        .flat_map(|l| (0..cfg.replications).map(move |r| (l, r)))
        .collect();
    let run = || -> Vec<ReplicationRecord> { jobs.par_iter().map(|&(l, r)| run_one(cfg, &ctx, l, r)).collect() };
    let records = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        return Err(Error::StudyFailed {
            failed,
            total: records.len(),
        });
    }
    let slopes = if cfg.ladder.len() >= 4 {
        fit_slopes(cfg, &records)?
    } else {
        Vec::new()
    };
    Ok(RateStudyResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        records,
        slopes,
        failed,
    })
}

fn alpha_tag(a: &MultiIndex) -> String {
    a.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("")
}

fn fit_slopes(cfg: &StudyConfig, records: &[ReplicationRecord]) -> Result<Vec<MetricSlope>> {
    type Getter = Box<dyn Fn(&ReplicationRecord) -> f64>;
    let mut metrics: Vec<(String, bool, Getter)> = vec![
        ("l2_err".into(), false, Box::new(|r| r.l2_err)),
        ("sup_err".into(), true, Box::new(|r| r.sup_err)),
        ("bellman_l2".into(), false, Box::new(|r| r.bellman_l2)),
    ];
    for (k, a) in cfg.alphas().into_iter().enumerate() {
        let tag = alpha_tag(&a);
        metrics.push((format!("d{tag}_l2_err"), false, Box::new(move |r| r.deriv[k].l2_err)));
        metrics.push((format!("d{tag}_sup_err"), true, Box::new(move |r| r.deriv[k].sup_err)));
    }
    let mut out = Vec::new();
    for (name, sup_axis, get) in metrics {
        let mut points = Vec::with_capacity(cfg.ladder.len());
        for (l, [n, t]) in cfg.ladder.iter().enumerate() {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.ladder_index == l && r.error.is_none())
                .map(&get)
                .collect();
            if vals.is_empty() {
                return Err(Error::StudyFailed {
                    failed: cfg.replications,
                    total: cfg.replications,
                });
            }
            let nt = (n * t) as f64;
            let x = if sup_axis { nt / nt.ln() } else { nt };
            points.push((x, vals.iter().sum::<f64>() / vals.len() as f64));
        }
        let Slope { slope, stderr, .. } = fit_loglog_slope(&points)?;
        out.push(MetricSlope {
            metric: name,
            x_axis: if sup_axis { "nt_over_log_nt" } else { "nt" }.into(),
            slope,
            stderr,
            points,
        });
    }
    Ok(out)
}

impl RateStudyResult {
    pub fn slope(&self, metric: &str) -> Option<&MetricSlope> {
        self.slopes.iter().find(|s| s.metric == metric)
    }

    /// Replication-mean of a metric per ladder point.
    pub fn mean_by_ladder(&self, get: impl Fn(&ReplicationRecord) -> f64) -> Vec<f64> {
        (0..self.config.ladder.len())
            .map(|l| {
                let v: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.ladder_index == l && r.error.is_none())
                    .map(&get)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    }

    /// One row per replication. Wall time is left out so identical
    /// configs give byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ladder_index,replication,n,t,nt,seed,multiplier,j,k,sup_err,l2_err");
        for a in self.config.alphas() {
            let tag = alpha_tag(&a);
            let _ = write!(s, ",d{tag}_sup_err,d{tag}_l2_err");
        }
        s.push_str(",bellman_sup,bellman_l2,value_err,status\n");
        for r in &self.records {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.ladder_index, r.replication, r.n, r.t, r.nt, r.seed, r.multiplier, r.j, r.k, r.sup_err, r.l2_err
            );
            for k in 0..self.config.alphas.len() {
                match r.deriv.get(k) {
                    Some(d) => {
                        let _ = write!(s, ",{},{}", d.sup_err, d.l2_err);
                    }
                    None => s.push_str(",NaN,NaN"),
                }
            }
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("\"error: {}\"", e.replace('"', "'")),
            };
            let _ = writeln!(s, ",{},{},{},{}", r.bellman_sup, r.bellman_l2, r.value_err, status);
        }
        s
    }

    pub fn write(&self, csv: Option<&Path>, json: Option<&Path>) -> Result<()> {
        if let Some(p) = csv {
            crate::io::write_atomic(p, self.to_csv().as_bytes())?;
        }
        if let Some(p) = json {
            crate::io::write_json(p, self)?;
        }
        Ok(())
    }
}
