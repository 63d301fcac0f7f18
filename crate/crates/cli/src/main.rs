//! Command-line front end: scenario generation, open-loop solves, closed-loop
//! simulation, controller comparison, verification and MILP export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use satdroop::harness::{
    closed_loop_simulate, compare_controllers, comparison_csv, default_solve_options, gen_synthetic_scenario,
    metrics_csv, run_verification_suite_with, trajectory_csv, CompareSettings, HarnessError, Mutation,
    RealizationRule, VerifyOptions,
};
use satdroop::milp::{
    solve_mps_file, BranchingRule, MilpBackend, MilpError, MilpStatus, ProcessBackend, ReferenceBackend,
    SolveOptions,
};
use satdroop::mpc::{export_mps, solve_open_loop, ControllerConfig, ControllerVariant, MpcError};
use satdroop::scenario::ScenarioError;
use satdroop::{MicrogridParams, Scenario, ScenarioFile, ScenarioWindow};
use serde_json::json;

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_RESOURCE: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "satdroop", version, about = "Robust MPC for droop-controlled islanded microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic scenario as JSON.
    GenScenario(GenArgs),
    /// Solve one open-loop problem and write the plan as JSON.
    Solve(SolveArgs),
    /// Run a closed loop and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Compare controllers along a prescient-driven closed loop.
    Compare(CompareArgs),
    /// Run the randomized property suites and write a JSON report.
    Verify(VerifyArgs),
    /// Write one open-loop problem as free MPS.
    Export(ExportArgs),
    /// Solve an MPS file with the built-in solver and write a solution file.
    MilpSolve(MilpSolveArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    days: usize,
    /// Relative half-width of the forecast intervals.
    #[arg(long, default_value_t = 0.1)]
    width: f64,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParamArgs {
    /// Number of renewable units kept from the reference microgrid, wind first.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    renewables: u8,
    /// Renewable capacity in pu.
    #[arg(long, default_value_t = 1.0)]
    renewable_cap: f64,
}

impl ParamArgs {
    fn params(&self) -> MicrogridParams {
        MicrogridParams::case_study_reduced(usize::from(self.renewables), self.renewable_cap)
    }
}

#[derive(Args)]
struct SolverArgs {
    /// `reference`, or `process:<program>` for an external solver called as
    /// `<program> [args] <instance.mps> <solution.txt>`.
    #[arg(long, default_value = "reference")]
    backend: String,
    /// Extra argument passed to a process backend; repeatable.
    #[arg(long = "backend-arg", allow_hyphen_values = true)]
    backend_args: Vec<String>,
    #[arg(long, value_enum, default_value_t = Branching::Priority)]
    branching: Branching,
    /// Per-solve wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Branching {
    Priority,
    MostFractional,
}

impl SolverArgs {
    fn backend(&self) -> Result<Arc<dyn MilpBackend>, CliError> {
        if self.backend == "reference" {
            return Ok(Arc::new(ReferenceBackend));
        }
        match self.backend.strip_prefix("process:") {
            Some(program) if !program.is_empty() => {
                Ok(Arc::new(ProcessBackend::new(program, self.backend_args.clone())))
            }
            _ => Err(CliError::input(format!(
                "unknown backend `{}`; use `reference` or `process:<program>`",
                self.backend
            ))),
        }
    }

    fn options(&self) -> Result<SolveOptions, CliError> {
        let mut options = default_solve_options();
        options.branching = match self.branching {
            Branching::Priority => BranchingRule::Priority,
            Branching::MostFractional => BranchingRule::MostFractional,
        };
        options.node_limit = self.node_limit;
        if let Some(t) = self.time_limit {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::input(format!("time limit {t} must be positive")));
            }
            options.time_limit = Some(Duration::from_secs_f64(t));
        }
        Ok(options)
    }
}

#[derive(Args)]
struct ControllerArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// prescient, mm, sat-mm, res-mm or sat-res-mm.
    #[arg(long)]
    controller: String,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
}

impl ControllerArgs {
    fn load(&self) -> Result<(ControllerConfig, MicrogridParams, Scenario), CliError> {
        let variant: ControllerVariant = self.controller.parse().map_err(|e: MpcError| CliError::input(e))?;
        let (params, scenario) = read_scenario(&self.scenario)?;
        let config = ControllerConfig::new(variant, self.horizon);
        config.validate(&params).map_err(CliError::input)?;
        Ok((config, params, scenario))
    }
}

fn window_at(scenario: &Scenario, start: usize, horizon: usize) -> Result<ScenarioWindow, CliError> {
    scenario
        .window(start, horizon, scenario.x0.clone(), scenario.delta0.clone())
        .ok_or_else(|| {
            CliError::input(format!(
                "scenario has {} samples, too few for horizon {horizon} from sample {start}",
                scenario.w_min.len()
            ))
        })
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    controller: ControllerArgs,
    /// First forecast sample of the window; the state is the scenario's
    /// initial state.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    controller: ControllerArgs,
    /// min, max or trace:<csv file> with one row of disturbances per sample.
    #[arg(long, default_value = "min")]
    realization: String,
    /// Stop after this many samples.
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated controller names.
    #[arg(long, value_delimiter = ',', default_value = "prescient,mm,sat-mm,res-mm,sat-res-mm")]
    controllers: Vec<String>,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    /// Limit the number of initial conditions.
    #[arg(long)]
    steps: Option<usize>,
    /// Skip the closed-loop runs of each controller.
    #[arg(long)]
    open_loop_only: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Predicted-cost CSV, one column per controller.
    #[arg(long)]
    out: PathBuf,
    /// Closed-loop metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    /// Run every suite with this many instances instead of the defaults.
    #[arg(long)]
    instances: Option<usize>,
    /// Inject a known defect to check that the suites detect it.
    #[arg(long)]
    mutate_load_sign: bool,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    controller: ControllerArgs,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MilpSolveArgs {
    mps: PathBuf,
    solution: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INFEASIBLE,
            message: message.into(),
        }
    }
}

fn milp_code(e: &MilpError) -> u8 {
    match e {
        MilpError::ResourceLimit { .. } => EXIT_RESOURCE,
        MilpError::InvalidInstance(_) | MilpError::Parse(_) | MilpError::UnknownBackend(_) => EXIT_INPUT,
        _ => EXIT_FAILURE,
    }
}

fn mpc_code(e: &MpcError) -> u8 {
    match e {
        MpcError::Milp(m) => milp_code(m),
        MpcError::InvalidConfig(_) | MpcError::WindowTooShort { .. } | MpcError::InvalidWindow(_) | MpcError::Model(_) => {
            EXIT_INPUT
        }
        MpcError::EncodingDefect(_) => EXIT_FAILURE,
    }
}

impl From<MpcError> for CliError {
    fn from(e: MpcError) -> Self {
        Self {
            code: mpc_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<MilpError> for CliError {
    fn from(e: MilpError) -> Self {
        Self {
            code: milp_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = if e.is_infeasible() {
            EXIT_INFEASIBLE
        } else if e.is_resource() {
            EXIT_RESOURCE
        } else {
            input_or_failure(&e)
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn input_or_failure(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Input(_) | HarnessError::Scenario(_) | HarnessError::Model(_) => EXIT_INPUT,
        HarnessError::Mpc(m) => mpc_code(m),
        HarnessError::Controller { source, .. } => input_or_failure(source),
        _ => EXIT_FAILURE,
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("{}: {e}", path.display()),
    })
}

fn read_scenario(path: &Path) -> Result<(MicrogridParams, Scenario), CliError> {
    ScenarioFile::from_json(&read_text(path)?)
        .map_err(|e: ScenarioError| CliError::input(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(CliError::input)?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if n == 0 => continue,
            Err(e) => return Err(CliError::input(format!("{} row {}: {e}", path.display(), n + 1))),
        }
    }
    Ok(rows)
}

fn parse_realization(text: &str) -> Result<RealizationRule, CliError> {
    match text {
        "min" => Ok(RealizationRule::Min),
        "max" => Ok(RealizationRule::Max),
        _ => match text.strip_prefix("trace:") {
            Some(file) => Ok(RealizationRule::Trace(read_trace(Path::new(file))?)),
            None => Err(CliError::input(format!(
                "unknown realization `{text}`; use min, max or trace:<file>"
            ))),
        },
    }
}

fn gen_scenario(args: &GenArgs) -> Result<(), CliError> {
    let params = args.params.params();
    let scenario = gen_synthetic_scenario(args.seed, args.days, &params, args.width)?;
    write_text(&args.out, &ScenarioFile::new(params, scenario).to_json())
}

fn solve(args: &SolveArgs) -> Result<(), CliError> {
    let (config, params, scenario) = args.controller.load()?;
    let window = window_at(&scenario, args.start, config.horizon)?;
    let backend = args.solver.backend()?;
    let sol = solve_open_loop(&config, &window, &params, backend.as_ref(), &args.solver.options()?)?;
    let report = json!({
        "controller": config.variant.to_string(),
        "horizon": config.horizon,
        "start": args.start,
        "status": sol.status,
        "predicted_cost": sol.predicted_cost,
        "best_bound": sol.best_bound,
        "plan": sol.plan,
        "trajectories": sol.trajectories,
        "nodes": sol.stats.nodes,
        "lp_solves": sol.stats.lp_solves,
    });
    write_text(&args.out, &serde_json::to_string_pretty(&report).expect("JSON values serialize"))?;
    if sol.status == MilpStatus::Infeasible {
        return Err(CliError::infeasible(format!("{} is infeasible on this window", config.variant)));
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (config, params, scenario) = args.controller.load()?;
    let rule = parse_realization(&args.realization)?;
    let backend = args.solver.backend()?;
    let record = closed_loop_simulate(
        &config,
        &scenario,
        &rule,
        &params,
        backend.as_ref(),
        &args.solver.options()?,
        args.steps,
    )?;
    let plant = config.effective_params(&params)?;
    write_text(&args.out, &trajectory_csv(&record, &plant))?;
    if let Some(path) = &args.metrics {
        write_text(path, &metrics_csv(&[&record]))?;
    }
    match &record.aborted {
        None => Ok(()),
        Some(a) => Err(CliError {
            code: if a.infeasible { EXIT_INFEASIBLE } else { EXIT_RESOURCE },
            message: format!("stopped at sample {}: {}", a.step, a.message),
        }),
    }
}

fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let (params, scenario) = read_scenario(&args.scenario)?;
    let mut configs = Vec::with_capacity(args.controllers.len());
    for name in &args.controllers {
        let variant: ControllerVariant = name.trim().parse().map_err(|e: MpcError| CliError::input(e))?;
        configs.push(ControllerConfig::new(variant, args.horizon));
    }
    let backend = args.solver.backend()?;
    let settings = CompareSettings {
        max_steps: args.steps,
        closed_loop: !args.open_loop_only,
        ..CompareSettings::default()
    };
    let comparison = compare_controllers(
        &configs,
        &scenario,
        &params,
        backend.as_ref(),
        &args.solver.options()?,
        &settings,
    )?;
    write_text(&args.out, &comparison_csv(&comparison))?;
    for c in &comparison.controllers {
        let feasible = c.predicted.iter().filter(|p| p.is_some()).count();
        let conventional = c
            .mean_predicted_conventional
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        eprintln!(
            "{}: feasible at {feasible}/{} initial conditions, mean predicted conventional energy {conventional}",
            c.config.variant,
            c.predicted.len()
        );
    }
    if let Some(path) = &args.metrics {
        let records: Vec<_> = comparison.controllers.iter().filter_map(|c| c.closed_loop.as_ref()).collect();
        write_text(path, &metrics_csv(&records))?;
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<bool, CliError> {
    let mut options = VerifyOptions::default();
    if let Some(n) = args.instances {
        options = VerifyOptions {
            rho_monotone: n,
            step_monotone: n,
            rho_oracle: n,
            storage_equivalence: n,
            worst_case_at_min: n,
            endpoint_sufficiency: n,
            inclusion: n,
            milp_enumeration: n,
            mutation: None,
        };
    }
    if args.mutate_load_sign {
        options.mutation = Some(Mutation::FlipLoadSign);
    }
    let report = run_verification_suite_with(&args.params.params(), args.seed, &options)?;
    write_text(
        &args.report,
        &serde_json::to_string_pretty(&report).expect("reports serialize"),
    )?;
    for s in &report.suites {
        eprintln!(
            "{:<24} {:>5} instances {:>4} failures {}",
            s.name,
            s.instances,
            s.failures,
            if s.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(report.passed)
}

fn export(args: &ExportArgs) -> Result<(), CliError> {
    let (config, params, scenario) = args.controller.load()?;
    let window = window_at(&scenario, args.start, config.horizon)?;
    write_text(&args.out, &export_mps(&config, &window, &params)?)
}

fn milp_solve(args: &MilpSolveArgs) -> Result<(), CliError> {
    if !args.mps.exists() {
        return Err(CliError::input(format!("{}: no such file", args.mps.display())));
    }
    let sol = solve_mps_file(&args.mps, &args.solution, &args.solver.options()?)?;
    if sol.status == MilpStatus::Infeasible {
        return Err(CliError::infeasible("instance is infeasible"));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    match &cli.command {
        Command::GenScenario(a) => gen_scenario(a)?,
        Command::Solve(a) => solve(a)?,
        Command::Simulate(a) => simulate(a)?,
        Command::Compare(a) => compare(a)?,
        Command::Verify(a) => return verify(a),
        Command::Export(a) => export(a)?,
        Command::MilpSolve(a) => milp_solve(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
