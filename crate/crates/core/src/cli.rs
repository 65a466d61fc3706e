//! Command-line front end.
//!
//! Exit codes: 0 success, 1 infeasible, 2 input or parse error, 3 solver
//! failure. Diagnostics go to stderr as a single line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::formulation::{build_problem, FairnessPolicy, FormulationError, References};
use crate::kpi::KpiReport;
use crate::netmodel::{feeder_stats, parse_feeder, serialize_feeder, to_per_unit, Feeder, FeederError};
use crate::pareto::{knee_point, read_frontier_csv, reference_solutions, sweep, ParetoError, SweepFamily};
use crate::powerflow::{constraint_residuals, residual_ids, solve_power_flow, PowerFlowError};
use crate::solver::{solve_hc, SolverError, SolverOptions};
use crate::synth::{generate_feeder, matched_pair, topology_experiment, Conductor, Layout, SynthError, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fairhc", version, about = "Fairness-aware hosting capacity of radial LV feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a feeder file.
    Validate { feeder: PathBuf },
    /// Aggregate length and impedance statistics.
    Stats {
        feeder: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power flow with a uniform DG injection at every load.
    Pf {
        feeder: PathBuf,
        /// DG active power per load, kW.
        #[arg(long, default_value_t = 0.0)]
        dg_kw: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hosting capacity under one fairness policy.
    Solve {
        feeder: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PoF-Gini frontier for one parameter family, as CSV.
    Pareto {
        feeder: PathBuf,
        /// bounded_lower, bounded_upper or bargaining.
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 21)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knee point of a frontier CSV.
    Knee {
        frontier: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic linear or branched feeder, as feeder JSON.
    Synth {
        #[arg(long, default_value = "linear")]
        layout: String,
        #[arg(long)]
        n_loads: usize,
        #[arg(long)]
        trunk_m: f64,
        #[arg(long, default_value_t = 100.0)]
        branch_m: f64,
        #[arg(long, default_value_t = Conductor::default().r_ohm_per_km)]
        r_ohm_per_km: f64,
        #[arg(long, default_value_t = Conductor::default().x_ohm_per_km)]
        x_ohm_per_km: f64,
        #[arg(long, default_value_t = Conductor::default().i_rated_a)]
        i_rated_a: f64,
        #[arg(long)]
        load_p_kw: Option<f64>,
        #[arg(long)]
        load_q_kvar: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear vs branched topology comparison on a matched synthetic pair.
    Experiment {
        #[arg(long, default_value_t = 10)]
        n_loads: usize,
        /// Conductor length of each feeder, m.
        #[arg(long, default_value_t = 2000.0)]
        total_m: f64,
        /// Lateral length of the branched feeder, m.
        #[arg(long, default_value_t = 100.0)]
        branch_m: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// utilitarian | egalitarian | bounded:alpha=A,beta=B | bargaining:k=K.
    /// A bare `bounded` or `bargaining` takes its parameters from the flags.
    #[arg(long, default_value = "utilitarian")]
    policy: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Fixed absorbing power factor of the DG units (default: unity).
    #[arg(long)]
    dg_pf: Option<f64>,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions, CliError> {
        let mut o = SolverOptions::default();
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_outer {
            o.max_outer = m;
        }
        if let Some(s) = self.starts {
            o.starts = s;
        }
        if let Some(s) = self.seed {
            o.seed = s;
        }
        if let Some(g) = self.grid_steps {
            o.grid_steps = g;
        }
        if let Some(pf) = self.dg_pf {
            if !(pf > 0.0 && pf <= 1.0) {
                return Err(CliError::Input(format!("--dg-pf must be in (0, 1], got {pf}")));
            }
            o.dg_q_per_p = SolverOptions::q_per_p_for_power_factor(pf);
        }
        Ok(o)
    }
}

impl PolicyArgs {
    fn policy(&self) -> Result<FairnessPolicy, CliError> {
        let missing = |flag: &str| CliError::Input(format!("policy `{}` needs --{flag}", self.policy));
        let text = match self.policy.trim() {
            "bounded" => format!(
                "bounded:alpha={},beta={}",
                self.alpha.ok_or_else(|| missing("alpha"))?,
                self.beta.ok_or_else(|| missing("beta"))?
            ),
            "bargaining" => format!("bargaining:k={}", self.k.ok_or_else(|| missing("k"))?),
            other => other.to_string(),
        };
        Ok(text.parse()?)
    }
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Infeasible(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Infeasible(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<FeederError> for CliError {
    fn from(e: FeederError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FormulationError> for CliError {
    fn from(e: FormulationError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Infeasible(_) => CliError::Infeasible(e.to_string()),
            SolverError::Formulation(f) => f.into(),
            SolverError::TooManyLoads { .. } => CliError::Input(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<PowerFlowError> for CliError {
    fn from(e: PowerFlowError) -> Self {
        match e {
            PowerFlowError::DimensionMismatch { .. } => CliError::Input(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<ParetoError> for CliError {
    fn from(e: ParetoError) -> Self {
        match e {
            ParetoError::Reference(s) => s.into(),
            ParetoError::Csv { .. } | ParetoError::TooFewSteps(_) | ParetoError::UnknownFamily(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Solver(s) => s.into(),
            SynthError::Kpi(_) => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

/// Provenance block attached to every JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the input file bytes, when there is one.
    pub input_sha256: Option<String>,
    pub policy: Option<String>,
    pub solver_options: Option<SolverOptions>,
    pub tool_version: String,
    /// RFC 3339; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
}

impl RunManifest {
    fn new(argv: &[String]) -> Self {
        Self {
            command_line: argv.to_vec(),
            input_sha256: None,
            policy: None,
            solver_options: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        }
    }
}

fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    body: T,
}

fn read_input(path: &Path) -> Result<(String, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))?;
    Ok((text, hash))
}

fn load_feeder(path: &Path, manifest: &mut RunManifest) -> Result<Feeder, CliError> {
    let (text, hash) = read_input(path)?;
    manifest.input_sha256 = Some(hash);
    Ok(parse_feeder(&text)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, manifest: &RunManifest, body: T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Output { manifest, body }).expect("outputs are serializable");
    text.push('\n');
    emit(out, &text)
}

#[derive(Serialize)]
struct SolveBody<'a> {
    solution: &'a crate::solver::HCSolution,
    kpi: Option<KpiReport>,
}

#[derive(Serialize)]
struct PfBody {
    converged: bool,
    state: crate::powerflow::PowerFlowState,
    feasible: bool,
    min_residual: f64,
    violated: Vec<String>,
}

fn execute(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(argv);
    match cli.command {
        Command::Validate { feeder } => {
            let f = load_feeder(&feeder, &mut manifest)?;
            emit(
                None,
                &format!("ok: {} buses, {} lines, {} loads\n", f.n_buses(), f.lines().len(), f.n_loads()),
            )
        }
        Command::Stats { feeder, out } => {
            let f = load_feeder(&feeder, &mut manifest)?;
            emit_json(out.as_deref(), &manifest, feeder_stats(&f))
        }
        Command::Pf { feeder, dg_kw, out } => {
            let f = load_feeder(&feeder, &mut manifest)?;
            let nf = to_per_unit(&f);
            let dg = vec![dg_kw / nf.s_base(); nf.n_loads()];
            let state = solve_power_flow(&nf, &dg, &vec![0.0; dg.len()])?;
            let res = constraint_residuals(&state, &nf);
            let violated = residual_ids(&nf)
                .iter()
                .zip(res.to_vec())
                .filter(|(_, r)| *r < 0.0)
                .map(|(id, _)| id.label(&nf))
                .collect();
            let body = PfBody {
                converged: true,
                feasible: res.is_feasible(0.0),
                min_residual: res.min(),
                violated,
                state,
            };
            emit_json(out.as_deref(), &manifest, body)
        }
        Command::Solve {
            feeder,
            policy,
            solver,
            out,
        } => {
            let f = load_feeder(&feeder, &mut manifest)?;
            let policy = policy.policy()?;
            let opts = solver.options()?;
            manifest.policy = Some(policy.to_string());
            manifest.solver_options = Some(opts.clone());
            let nf = to_per_unit(&f);

            let uti = if policy == FairnessPolicy::Utilitarian {
                None
            } else {
                Some(solve_hc(&build_problem(&nf, FairnessPolicy::Utilitarian, None)?, &opts)?)
            };
            let refs = if policy.needs_references() {
                let (uti, egal) = reference_solutions(&f, &opts)?;
                Some(References {
                    p_egal: egal.allocation_pu[0],
                    uti_allocation: uti.allocation_pu,
                })
            } else {
                None
            };
            let sol = solve_hc(&build_problem(&nf, policy, refs.as_ref())?, &opts)?;
            let hc_uti = uti.as_ref().map_or(sol.hc_total, |u| u.hc_total);
            let kpi = KpiReport::new(hc_uti, &sol.allocation)
                .map_err(|e| log::warn!("KPIs unavailable: {e}"))
                .ok();
            emit_json(out.as_deref(), &manifest, SolveBody { solution: &sol, kpi })
        }
        Command::Pareto {
            feeder,
            family,
            steps,
            jobs,
            solver,
            out,
        } => {
            let f = load_feeder(&feeder, &mut manifest)?;
            let family: SweepFamily = family.parse()?;
            let opts = solver.options()?;
            let frontier = sweep(&f, family, steps, &opts, jobs.max(1))?;
            emit(out.as_deref(), &frontier.to_csv())
        }
        Command::Knee { frontier, out } => {
            let (text, hash) = read_input(&frontier)?;
            manifest.input_sha256 = Some(hash);
            let points = read_frontier_csv(&text)?;
            let knee = knee_point(&points)?;
            emit_json(out.as_deref(), &manifest, serde_json::json!({ "knee": knee }))
        }
        Command::Synth {
            layout,
            n_loads,
            trunk_m,
            branch_m,
            r_ohm_per_km,
            x_ohm_per_km,
            i_rated_a,
            load_p_kw,
            load_q_kvar,
            seed,
            out,
        } => {
            let layout: Layout = layout.parse()?;
            let mut spec = SynthSpec::new(n_loads, layout, trunk_m);
            spec.branch_len_m = branch_m;
            spec.conductor = Conductor {
                r_ohm_per_km,
                x_ohm_per_km,
                i_rated_a,
            };
            if let Some(p) = load_p_kw {
                spec.load_p_kw = p;
            }
            if let Some(q) = load_q_kvar {
                spec.load_q_kvar = q;
            }
            spec.seed = seed;
            let feeder = generate_feeder(&spec)?;
            let mut text = serialize_feeder(&feeder);
            text.push('\n');
            emit(out.as_deref(), &text)
        }
        Command::Experiment {
            n_loads,
            total_m,
            branch_m,
            solver,
            out,
        } => {
            let opts = solver.options()?;
            manifest.solver_options = Some(opts.clone());
            let (linear, branched) = matched_pair(n_loads, total_m, branch_m);
            let report = topology_experiment(&linear, &branched, &opts)?;
            emit_json(out.as_deref(), &manifest, report)
        }
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
