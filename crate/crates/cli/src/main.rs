use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qsieve::diagnostics::{check_ej_bound, compute_report, Coverage, Population, DEFAULT_BURN_IN};
use qsieve::harness::{run_study, FamilyName, StudyConfig};
use qsieve::mdp::recipes::{self, Lab, RecipeId};
use qsieve::mdp::{
    fixed_point_oracle, sample_trajectories, DiscreteModel, InitialDist, InterpOrder, OracleQ, PolicyDensity,
};
use qsieve::npiv::{
    bootstrap_value_se, dataset_moments, fit_moments, plugin_value, trajectory_moments, value_functional, JNorm,
    SieveDesign, SieveSetup,
};
use qsieve::numerics::DEFAULT_RTOL;
use qsieve::{BasisSpec, Dataset, Error, Result, SieveFit};

#[derive(Parser)]
#[command(name = "qsieve", version, about = "Sieve 2SLS off-policy evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw behavior-policy trajectories from a recipe MDP.
    Simulate(SimulateArgs),
    /// Tabulate the true Q-function on a grid.
    Oracle(OracleArgs),
    /// Fit a sieve Q-function to a dataset.
    Fit(FitArgs),
    /// Estimate ill-posedness quantities for a basis pair.
    Diagnose(DiagnoseArgs),
    /// Run a replicated convergence-rate study.
    RateStudy(RateStudyArgs),
    /// Plug-in policy value of a fitted Q-function.
    Value(ValueArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Recipe {
    Benchmark,
    SinCos,
}

impl From<Recipe> for RecipeId {
    fn from(r: Recipe) -> Self {
        match r {
            Recipe::Benchmark => RecipeId::Benchmark,
            Recipe::SinCos => RecipeId::SinCos,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Bspline,
    Cosine,
    Legendre,
}

impl From<FamilyArg> for FamilyName {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Bspline => FamilyName::Bspline,
            FamilyArg::Cosine => FamilyName::Cosine,
            FamilyArg::Legendre => FamilyName::Legendre,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Sup,
}

#[derive(Args)]
struct LabArgs {
    #[arg(long, value_enum, default_value = "benchmark")]
    recipe: Recipe,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Reward noise standard deviation before clipping.
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Evaluate the policy that always plays this action instead of the
    /// recipe's target policy.
    #[arg(long, value_delimiter = ',')]
    target_action: Option<Vec<f64>>,
}

impl LabArgs {
    fn build(&self) -> Result<Lab> {
        let mut lab = recipes::build(self.recipe.into(), self.gamma, self.noise_sd)?;
        if let Some(a0) = &self.target_action {
            if a0.len() != lab.mdp.action_dim() {
                return Err(Error::input(format!(
                    "--target-action needs {} value(s), got {}",
                    lab.mdp.action_dim(),
                    a0.len()
                )));
            }
            if !lab.mdp.action_box.contains(a0) {
                return Err(Error::input(format!(
                    "--target-action {a0:?} lies outside the action box"
                )));
            }
            lab.target = PolicyDensity::constant_action(a0.clone(), lab.mdp.action_box.clone());
        }
        Ok(lab)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    lab: LabArgs,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    /// Recorded transitions per trajectory.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long)]
    seed: u64,
    /// Output file; `.bin` selects the binary format, anything else CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMethod {
    /// Closed-form Q* of the recipe.
    Designed,
    /// Fixed-point iteration of the Bellman operator.
    FixedPoint,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    lab: LabArgs,
    #[arg(long, value_enum, default_value = "designed")]
    method: OracleMethod,
    #[arg(long, default_value_t = 201)]
    per_dim: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SieveArgs {
    #[arg(long, value_enum, default_value = "bspline")]
    psi_family: FamilyArg,
    #[arg(long, value_enum, default_value = "bspline")]
    b_family: FamilyArg,
    /// B-spline degree of both bases.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Explicit per-dimension counts for psi, e.g. `6,6`.
    #[arg(long, value_delimiter = ',')]
    psi_counts: Option<Vec<usize>>,
    /// Explicit per-dimension counts for b; defaults to psi counts plus `--b-extra`.
    #[arg(long, value_delimiter = ',')]
    b_counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    b_extra: usize,
    /// Smoothness used by the dimension rule.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, value_enum, default_value = "l2")]
    norm: NormArg,
    #[arg(long, default_value_t = 1.0)]
    multiplier: f64,
}

impl SieveArgs {
    fn bases(&self, lab: &Lab, nt: usize) -> Result<(BasisSpec, BasisSpec)> {
        let psi_family = FamilyName::from(self.psi_family).with_degree(self.degree);
        let b_family = FamilyName::from(self.b_family).with_degree(self.degree);
        let domain = lab.mdp.joint_box();
        let psi = match &self.psi_counts {
            Some(c) => BasisSpec::new(psi_family, c.clone(), domain.clone())?,
            None => {
                let design = SieveDesign {
                    psi_family,
                    b_family,
                    b_extra: self.b_extra,
                    p: self.p,
                    norm: match self.norm {
                        NormArg::L2 => JNorm::L2,
                        NormArg::Sup => JNorm::Sup,
                    },
                    domain: domain.clone(),
                };
                design.bases(nt, self.multiplier)?.0
            }
        };
        let b_counts = match &self.b_counts {
            Some(c) => c.clone(),
            None => psi
                .counts
                .iter()
                .map(|m| (m + self.b_extra).max(b_family.min_count()))
                .collect(),
        };
        let b = BasisSpec::new(b_family, b_counts, domain)?;
        Ok((psi, b))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    lab: LabArgs,
    #[command(flatten)]
    sieve: SieveArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    lab: LabArgs,
    #[command(flatten)]
    sieve: SieveArgs,
    /// Sample size fed to the dimension rule when counts are not given.
    #[arg(long, default_value_t = 10_000)]
    nt: usize,
    #[arg(long, default_value_t = 20_000)]
    mc_points: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RateStudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_csv` from the config.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides `output_json` from the config.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Overrides `threads` from the config.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ValueArgs {
    #[command(flatten)]
    lab: LabArgs,
    #[arg(long)]
    fit: PathBuf,
    /// Start every trajectory here instead of uniformly on the state box.
    #[arg(long, value_delimiter = ',')]
    initial_state: Option<Vec<f64>>,
    /// Dataset the fit came from; enables the bootstrap standard error.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Oracle(a) => oracle(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose(a),
        Command::RateStudy(a) => rate_study(a),
        Command::Value(a) => value(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let lab = a.lab.build()?;
    let ds = sample_trajectories(&lab.mdp, &lab.behavior, a.n, a.t, a.burn_in, a.seed)?;
    ds.save(&a.out)?;
    println!("wrote {} transitions to {}", ds.len(), a.out.display());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let lab = a.lab.build()?;
    let oq = match a.method {
        OracleMethod::Designed => {
            if a.lab.target_action.is_some() {
                return Err(Error::input(
                    "the designed oracle is tied to the recipe's target policy; use --method fixed-point",
                ));
            }
            OracleQ::designed(&lab.q_star, &lab.mdp.joint_box(), a.per_dim, InterpOrder::Cubic)?
        }
        OracleMethod::FixedPoint => fixed_point_oracle(
            &lab.mdp,
            &lab.target,
            a.per_dim,
            &lab.state_rule,
            &lab.action_rule,
            a.tol,
            a.max_iter,
            InterpOrder::Cubic,
        )?,
    };
    qsieve::io::write_json(&a.out, &oq)?;
    println!("wrote {}^{} grid to {}", a.per_dim, oq.domain.dim(), a.out.display());
    if let Some(r) = oq.residual() {
        println!("final sup change {r:.3e}");
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let lab = a.lab.build()?;
    let ds = Dataset::load(&a.data)?;
    let (psi, b) = a.sieve.bases(&lab, ds.len())?;
    let setup = SieveSetup::new(&psi, &b, &lab.target, a.lab.gamma, &lab.action_rule);
    let fit = fit_moments(&dataset_moments(&ds, &setup)?, &psi, &b, a.lab.gamma, DEFAULT_RTOL)?;
    fit.save(&a.out)?;
    let d = &fit.diagnostics;
    println!("J = {}, K = {}, rows = {}", psi.len(), b.len(), d.n_rows);
    println!(
        "projected objective {:.6e}, cond(B'B) {:.3e}",
        d.projected_objective, d.cond_btb
    );
    if d.rank_deficient {
        eprintln!(
            "warning: instrument Gram matrix is rank deficient (rank {})",
            d.rank_btb
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let lab = a.lab.build()?;
    let (psi, b) = a.sieve.bases(&lab, a.nt)?;
    let model = DiscreteModel::new(&lab.mdp, &lab.behavior, &lab.target, &lab.state_rule, &lab.action_rule)?;
    let pop = Population::sample(
        &lab.mdp,
        &lab.behavior,
        &lab.target,
        &lab.state_rule,
        &lab.action_rule,
        Coverage::from_model(&model),
        a.mc_points,
        a.burn_in,
        a.seed,
    )?;
    let r = compute_report(&pop, &psi, &b, None)?;
    let chk = check_ej_bound(&r);
    println!("{:<12} {:>14}", "J", r.j);
    println!("{:<12} {:>14}", "K", r.k);
    let rows: [(&str, f64); 12] = [
        ("e_J", r.e_j),
        ("omega_J", r.omega_j),
        ("s_JK", r.s_jk),
        ("tau_J", r.tau_j),
        ("tau bound", r.tau_bound),
        ("zeta_b", r.zeta_b),
        ("zeta_kappa", r.zeta_kappa),
        ("xi_psi", r.xi_psi),
        ("xi_kappa", r.xi_kappa),
        ("p_min", r.p_min),
        ("p_max", r.p_max),
        ("e_J floor", chk.floor_proof),
    ];
    for (k, v) in rows {
        println!("{k:<12} {v:>14.6e}");
    }
    println!("{:<12} {:>14}", "e_J check", if chk.passed { "pass" } else { "fail" });
    if let Some(out) = &a.out {
        qsieve::io::write_json(out, &r)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn rate_study(a: RateStudyArgs) -> Result<()> {
    let mut cfg = StudyConfig::load(&a.config)?;
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let csv = a.csv.or_else(|| cfg.output_csv.clone());
    let json = a.json.or_else(|| cfg.output_json.clone());
    let res = run_study(&cfg)?;
    res.write(csv.as_deref(), json.as_deref())?;
    println!("{} replications, {} failed", res.records.len(), res.failed);
    for s in &res.slopes {
        println!(
            "{:<16} slope {:+.3} (se {:.3}) vs {}",
            s.metric, s.slope, s.stderr, s.x_axis
        );
    }
    for p in [csv, json].iter().flatten() {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn value(a: ValueArgs) -> Result<()> {
    let lab = a.lab.build()?;
    let fit = SieveFit::load(&a.fit)?;
    let initial = match &a.initial_state {
        Some(s) => InitialDist::PointMass(s.clone()),
        None => InitialDist::Uniform,
    };
    let v = plugin_value(&fit, &lab.target, &initial, &lab.state_rule, &lab.action_rule)?;
    let se = match &a.data {
        Some(path) => Some(bootstrap_se(&fit, &lab, &initial, path, &a)?),
        None => None,
    };
    match se {
        Some(se) => println!("{v:.10} (bootstrap se {se:.3e})"),
        None => println!("{v:.10}"),
    }
    Ok(())
}

fn bootstrap_se(fit: &SieveFit, lab: &Lab, initial: &InitialDist, data: &Path, a: &ValueArgs) -> Result<f64> {
    let ds = Dataset::load(data)?;
    let setup = SieveSetup::new(&fit.psi, &fit.b, &lab.target, fit.gamma, &lab.action_rule);
    let per_traj = trajectory_moments(&ds, &setup)?;
    let ell = value_functional(&fit.psi, &lab.target, initial, &lab.state_rule, &lab.action_rule)?;
    bootstrap_value_se(&per_traj, &fit.psi, &fit.b, fit.gamma, &ell, a.bootstrap, a.seed)
}
