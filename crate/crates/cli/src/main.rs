use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use hfl_core::io::{
    write_allocation_csv, write_edges_csv, write_loss_csv, write_sweep_csv, write_trace_csv,
    Document, HflDocument, ScenarioDocument, SroaDocument, SweepRow, TsiaDocument,
};
use hfl_core::{
    generate_scenario, geo_initial_assignment, hfl_sim, run_fedavg, run_hfl, sroa,
    sroa::DeadlineBounds, tsia, Assignment, DeadlineSearch, GeneratorConfig, HflConfig,
    InnerSolver, LossKind, Scenario, SolverConfig, SroaOutcome, TsiaConfig,
};

/// Energy/latency-aware resource allocation and user assignment for
/// hierarchical federated learning.
#[derive(Parser, Debug)]
#[command(name = "hfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random scenario and write it as a JSON document.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Allocate bandwidth, CPU frequency and power for one assignment.
    Sroa {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Assignment document (`{"groups": [[...], ...]}`); nearest edge if omitted.
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Search user assignments with the two-stage transfer heuristic.
    Tsia {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Cap on moves per stage.
        #[arg(long, default_value_t = 500)]
        stage_iters: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve for several latency weights and tabulate the trade-off.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Search assignments per point instead of using the nearest edge.
        #[arg(long)]
        tsia: bool,
        #[arg(long, default_value_t = 500)]
        stage_iters: usize,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Train a synthetic model with hierarchical averaging.
    HflSim {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = LossArg::LeastSquares)]
        loss: LossArg,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Seed of the synthetic datasets.
        #[arg(long, default_value_t = 0)]
        task_seed: u64,
        /// Target noise (least squares only).
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        global_iters: Option<u32>,
        #[arg(long)]
        edge_iters: Option<u32>,
        #[arg(long)]
        local_iters: Option<u32>,
        /// Two-tier reference: every user averaged at the cloud each round.
        #[arg(long)]
        flat: bool,
        #[arg(long)]
        assignment: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    n_users: usize,
    #[arg(long, default_value_t = 5)]
    n_edges: usize,
    /// Generator override `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Scenario document; drawn from the generator flags if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
    /// Latency weight; repeat for sweeps. Overrides the scenario's value.
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InnerArg {
    Price,
    MinEnergy,
    BandwidthRule,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DeadlineArg {
    Golden,
    Descent,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    LeastSquares,
    Logistic,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Set all four solver tolerances.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    freq_tol: Option<f64>,
    #[arg(long)]
    power_tol: Option<f64>,
    #[arg(long)]
    deadline_tol: Option<f64>,
    #[arg(long)]
    bandwidth_tol: Option<f64>,
    /// Safety cap on every solver loop.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    inner: Option<InnerArg>,
    #[arg(long, value_enum)]
    deadline_search: Option<DeadlineArg>,
    /// Explicit deadline bracket `LOW,UP` in seconds over the whole run.
    #[arg(long, value_name = "LOW,UP")]
    deadline_bounds: Option<String>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.tol {
            cfg = cfg.with_tolerance(t);
        }
        for (slot, v) in [
            (&mut cfg.freq_tol, self.freq_tol),
            (&mut cfg.power_tol, self.power_tol),
            (&mut cfg.deadline_tol, self.deadline_tol),
            (&mut cfg.bandwidth_tol, self.bandwidth_tol),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(i) = self.inner {
            cfg.inner = match i {
                InnerArg::Price => InnerSolver::BandwidthPrice,
                InnerArg::MinEnergy => InnerSolver::MinEnergy,
                InnerArg::BandwidthRule => InnerSolver::BandwidthRule,
            };
        }
        if let Some(d) = self.deadline_search {
            cfg.deadline_search = match d {
                DeadlineArg::Golden => DeadlineSearch::Golden,
                DeadlineArg::Descent => DeadlineSearch::Descent,
            };
        }
        if let Some(raw) = &self.deadline_bounds {
            let (low, up) = raw
                .split_once(',')
                .ok_or_else(|| anyhow!("--deadline-bounds expects LOW,UP"))?;
            cfg.deadline_bounds = DeadlineBounds::Explicit {
                low: low.trim().parse().context("--deadline-bounds LOW")?,
                up: up.trim().parse().context("--deadline-bounds UP")?,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Raised when the solver proves the request infeasible (exit code 2).
#[derive(Debug)]
struct Infeasible(String);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "infeasible: {}", self.0)
    }
}

impl std::error::Error for Infeasible {}

fn parse_overrides(raw: &[String]) -> Result<BTreeMap<String, String>> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn generated(gen: &GenArgs) -> Result<ScenarioDocument> {
    let mut cfg = GeneratorConfig::default();
    cfg.apply_overrides(&parse_overrides(&gen.overrides)?)?;
    let scenario = generate_scenario(gen.seed, gen.n_users, gen.n_edges, &cfg)?;
    Ok(ScenarioDocument::new(scenario, Some(gen.seed), Some(cfg)))
}

fn load_scenario(input: &InputArgs) -> Result<Scenario> {
    let scenario = match &input.scenario {
        Some(_) if !input.gen.overrides.is_empty() => {
            bail!("--set only applies to generated scenarios")
        }
        Some(path) => {
            ScenarioDocument::load(path)
                .with_context(|| format!("reading scenario {}", path.display()))?
                .scenario
        }
        None => generated(&input.gen)?.scenario,
    };
    Ok(scenario)
}

fn single_lambda(input: &InputArgs) -> Result<Option<f64>> {
    match input.lambdas.as_slice() {
        [] => Ok(None),
        [l] => Ok(Some(check_lambda(*l)?)),
        _ => bail!("this command takes at most one --lambda"),
    }
}

fn check_lambda(l: f64) -> Result<f64> {
    if !(l.is_finite() && l > 0.0) {
        bail!("--lambda must be finite and > 0, got {l}");
    }
    Ok(l)
}

fn load_assignment(path: Option<&Path>, scenario: &Scenario) -> Result<Assignment> {
    match path {
        None => Ok(geo_initial_assignment(scenario)),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let a: Assignment =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            a.validate(scenario.n_users(), scenario.n_edges())?;
            Ok(a)
        }
    }
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { gen, out_dir } => {
            let doc = generated(&gen)?;
            prepare(&out_dir)?;
            let path = out_dir.join("scenario.json");
            doc.write(&path)?;
            println!(
                "wrote {} ({} users, {} edges)",
                path.display(),
                doc.scenario.n_users(),
                doc.scenario.n_edges()
            );
        }
        Command::Sroa {
            input,
            solver,
            assignment,
            out_dir,
        } => {
            let mut scenario = load_scenario(&input)?;
            if let Some(l) = single_lambda(&input)? {
                scenario = scenario.with_importance_weight(l);
            }
            let cfg = solver.config()?;
            let assignment = load_assignment(assignment.as_deref(), &scenario)?;
            let outcome = sroa(&scenario, &assignment, &cfg)?;
            prepare(&out_dir)?;
            SroaDocument::new(cfg, assignment, outcome.clone())
                .write(&out_dir.join("sroa.json"))?;
            match outcome {
                SroaOutcome::Solved(sol) => {
                    write_allocation_csv(
                        out_file(&out_dir, "allocation.csv")?,
                        &sol.allocation,
                        &sol.report,
                    )?;
                    write_edges_csv(out_file(&out_dir, "edges.csv")?, &sol.report)?;
                    println!(
                        "R = {}  E_sum = {}  T_sum = {}",
                        sol.objective, sol.report.e_sum, sol.report.t_sum
                    );
                }
                SroaOutcome::Infeasible(why) => return Err(Infeasible(why.to_string()).into()),
            }
        }
        Command::Tsia {
            input,
            solver,
            stage_iters,
            out_dir,
        } => {
            let mut scenario = load_scenario(&input)?;
            if let Some(l) = single_lambda(&input)? {
                scenario = scenario.with_importance_weight(l);
            }
            let cfg = TsiaConfig {
                solver: solver.config()?,
                max_iters: stage_iters,
            };
            let result = tsia(&scenario, &cfg)?;
            prepare(&out_dir)?;
            write_trace_csv(out_file(&out_dir, "trace.csv")?, &result.trace)?;
            if let Some(sol) = &result.solution {
                write_allocation_csv(
                    out_file(&out_dir, "allocation.csv")?,
                    &sol.allocation,
                    &sol.report,
                )?;
                write_edges_csv(out_file(&out_dir, "edges.csv")?, &sol.report)?;
            }
            let summary = format!(
                "R* = {}  initial R = {}  patterns evaluated = {}  moves per stage = {:?}",
                result.objective,
                result.initial_objective,
                result.evaluations,
                result
                    .stages
                    .iter()
                    .map(|s| s.iterations)
                    .collect::<Vec<_>>()
            );
            let feasible = result.solution.is_some();
            TsiaDocument::new(cfg, result).write(&out_dir.join("tsia.json"))?;
            if !feasible {
                return Err(Infeasible(
                    "no evaluated assignment admits a feasible allocation".into(),
                )
                .into());
            }
            println!("{summary}");
        }
        Command::Sweep {
            input,
            solver,
            tsia: use_tsia,
            stage_iters,
            jobs,
            out_dir,
        } => {
            if input.lambdas.is_empty() {
                bail!("sweep needs at least one --lambda");
            }
            let mut lambdas = input
                .lambdas
                .iter()
                .map(|&l| check_lambda(l))
                .collect::<Result<Vec<_>>>()?;
            lambdas.sort_by(f64::total_cmp);
            lambdas.dedup();
            let scenario = load_scenario(&input)?;
            let cfg = solver.config()?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
            let rows: Vec<SweepRow> = pool.install(|| {
                lambdas
                    .par_iter()
                    .map(|&lambda| {
                        sweep_point(&scenario, lambda, &cfg, use_tsia.then_some(stage_iters))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            prepare(&out_dir)?;
            write_sweep_csv(out_file(&out_dir, "sweep.csv")?, &rows)?;
            let infeasible = rows.iter().filter(|r| !r.feasible).count();
            println!("{} points, {} infeasible", rows.len(), infeasible);
        }
        Command::HflSim {
            input,
            loss,
            dim,
            lr,
            task_seed,
            noise,
            global_iters,
            edge_iters,
            local_iters,
            flat,
            assignment,
            out_dir,
        } => {
            let scenario = load_scenario(&input)?;
            let kind = match loss {
                LossArg::LeastSquares => LossKind::LeastSquares,
                LossArg::Logistic => LossKind::Logistic,
            };
            let mut cfg = HflConfig::from_scenario(&scenario, lr);
            cfg.global_iters = global_iters.unwrap_or(cfg.global_iters);
            cfg.edge_iters = edge_iters.unwrap_or(cfg.edge_iters);
            cfg.local_iters = local_iters.unwrap_or(cfg.local_iters);
            let assignment = load_assignment(assignment.as_deref(), &scenario)?;
            let tasks = hfl_sim::tasks_for_scenario(&scenario, task_seed, dim, kind, noise)?;
            let w0 = vec![0.0; dim];
            let run = if flat {
                run_fedavg(
                    &tasks,
                    cfg.global_iters,
                    cfg.local_iters,
                    cfg.learning_rate,
                    &w0,
                )?
            } else {
                run_hfl(&tasks, &assignment, &cfg, &w0)?
            };
            prepare(&out_dir)?;
            write_loss_csv(out_file(&out_dir, "loss.csv")?, &run.losses)?;
            let last = run.losses.last().copied();
            HflDocument::new(
                cfg,
                kind,
                task_seed,
                dim,
                flat,
                assignment,
                run.losses,
                run.weights,
            )
            .write(&out_dir.join("hfl.json"))?;
            match last {
                Some(l) => println!("final loss = {l}"),
                None => println!("no global iterations run"),
            }
        }
    }
    Ok(())
}

fn sweep_point(
    scenario: &Scenario,
    lambda: f64,
    cfg: &SolverConfig,
    tsia_iters: Option<usize>,
) -> Result<SweepRow> {
    let s = scenario.with_importance_weight(lambda);
    let solution = match tsia_iters {
        Some(max_iters) => {
            tsia(
                &s,
                &TsiaConfig {
                    solver: cfg.clone(),
                    max_iters,
                },
            )?
            .solution
        }
        None => sroa(&s, &geo_initial_assignment(&s), cfg)?
            .solution()
            .cloned(),
    };
    Ok(match solution {
        Some(sol) => SweepRow {
            lambda,
            feasible: true,
            objective: sol.objective,
            e_sum: Some(sol.report.e_sum),
            t_sum: Some(sol.report.t_sum),
        },
        None => SweepRow {
            lambda,
            feasible: false,
            objective: f64::INFINITY,
            e_sum: None,
            t_sum: None,
        },
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Infeasible>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
