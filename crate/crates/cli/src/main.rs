//! `surestep` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration,
//! 3 optimization or ablation failure, 4 gradient check mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use surestep::belief_engine::entropy;
use surestep::io::{self, AblationFile, LoadedScenario, Meta, ScenarioFile};
use surestep::optimizer::{gradient, gradient_relative_error, optimize, worst_case_scale, GradientMode, Trajectory};
use surestep::sim_harness::{
    evaluate_scenario, make_baseline, sample_scenario, tabulate, AblationConfig, AblationSuite, AblationTable,
    ScenarioBounds,
};
use surestep::Error;

/// Largest accepted relative gradient error.
const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Largest tolerated fraction of failed ablation scenarios.
const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Parser, Debug)]
#[command(name = "surestep", version, about = "Uncertainty-aware trajectory optimization")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the baseline trajectory of a scenario.
    Optimize(OptimizeArgs),
    /// Noisy rollouts of the baseline and optimized trajectories of a scenario.
    Rollout(RolloutArgs),
    /// Ablation study over randomly sampled scenarios.
    Ablation(AblationArgs),
    /// Maximum-likelihood belief propagation along a trajectory.
    Propagate(PropagateArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Write a random scenario file.
    Sample(SampleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradMode {
    Analytic,
    Fd,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed recorded in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    grad_mode: Option<GradMode>,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    rollouts: usize,
    /// Comma-separated variant names; the baseline is always included.
    #[arg(long, default_value = "all")]
    variants: String,
    #[arg(long, value_enum)]
    grad_mode: Option<GradMode>,
}

#[derive(Args, Debug)]
struct AblationArgs {
    /// Ablation settings file; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    variants: Option<String>,
    #[arg(long, value_enum)]
    grad_mode: Option<GradMode>,
}

#[derive(Args, Debug)]
struct PropagateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Trajectory file to propagate; the baseline is used without one.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    fd_step: f64,
    /// Test hook: perturbs the analytic gradient before comparing.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Config(String),
    Failed(String),
    Gradient(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Gradient(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Config(m) | CliError::Failed(m) | CliError::Gradient(m) => m,
        }
    }
}

/// Input problems are configuration errors; anything else is a failure.
fn input(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn failed(e: Error) -> CliError {
    CliError::Failed(e.to_string())
}

type CliResult<T = ()> = Result<T, CliError>;

fn write(dir: &Path, name: &str, contents: &str) -> CliResult {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write '{}': {e}", path.display())))
}

fn prepare_out(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create '{}': {e}", dir.display())))
}

fn load_scenario(
    path: &Path,
    seed: Option<u64>,
    grad_mode: Option<GradMode>,
) -> CliResult<(ScenarioFile, LoadedScenario)> {
    if !path.is_file() {
        return Err(CliError::Config(format!("scenario file not found: {}", path.display())));
    }
    let mut file = ScenarioFile::load(path).map_err(input)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    match grad_mode {
        Some(GradMode::Analytic) => file.optimizer.gradient = io::GradientSpec::Analytic,
        Some(GradMode::Fd) => file.optimizer.gradient = io::GradientSpec::FiniteDifference,
        None => {}
    }
    let loaded = file.resolve().map_err(input)?;
    let resolved = ScenarioFile::from_scenario(
        &loaded.scenario,
        &loaded.mask,
        &loaded.optimizer,
        loaded.worst_case_factor,
    );
    Ok((resolved, loaded))
}

fn cmd_optimize(args: &OptimizeArgs) -> CliResult {
    let (resolved, l) = load_scenario(&args.scenario, args.seed, args.grad_mode)?;
    let meta = Meta::new("optimize", l.scenario.seed, &resolved);
    let baseline = make_baseline(&l.scenario).map_err(input)?;
    let mut problem = l.scenario.problem(l.mask);
    problem.noise = worst_case_scale(&l.scenario.noise, l.worst_case_factor).map_err(input)?;
    let report = optimize(&baseline, &problem, &l.optimizer).map_err(failed)?;
    let before = l.scenario.propagate_ml(&baseline).map_err(failed)?;
    let after = l.scenario.propagate_ml(&report.trajectory).map_err(failed)?;

    prepare_out(&args.out)?;
    write(
        &args.out,
        "trajectory.json",
        &io::trajectory_json(&report.trajectory, &l.scenario.cameras, &meta),
    )?;
    write(&args.out, "history.csv", &io::history_csv(&report.history, &meta))?;
    write(&args.out, "trace_before.json", &io::trace_json(&before, &meta))?;
    write(&args.out, "trace_after.json", &io::trace_json(&after, &meta))?;
    write(
        &args.out,
        "plot.csv",
        &io::plot_csv(
            &[
                ("baseline", &baseline, &before),
                ("optimized", &report.trajectory, &after),
            ],
            &l.scenario.cameras,
            &meta,
        ),
    )?;

    let (a, b) = (report.initial_loss(), report.final_loss());
    println!("iterations: {}", report.history.len() - 1);
    println!("loss: {:.6e} -> {:.6e}", a.total, b.total);
    println!(
        "trace: {:.6e} -> {:.6e}",
        before.final_belief().trace(),
        after.final_belief().trace()
    );
    if report.line_search_failed {
        println!("note: stopped early, no descent step found");
    }
    Ok(())
}

fn write_table(out: &Path, table: &AblationTable, meta: &Meta, prefix: &str) -> CliResult {
    prepare_out(out)?;
    write(out, &format!("{prefix}.json"), &io::ablation_json(table, meta))?;
    write(out, &format!("{prefix}.csv"), &io::ablation_csv(table, meta))?;
    write(out, "trials.csv", &io::trials_csv(table, meta))?;
    write(out, "plot.csv", &io::ablation_plot_csv(table, meta).map_err(failed)?)
}

fn print_table(table: &AblationTable) {
    println!(
        "{:<26} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "pos", "pos_sd", "ori", "ori_sd", "tr", "tr_ml", "ent", "ent_ml"
    );
    for r in &table.rows {
        let v = r.relative.values();
        println!(
            "{:<26} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.variant.label(),
            v[0],
            v[1],
            v[2],
            v[3],
            v[4],
            v[5],
            v[6],
            v[7]
        );
    }
}

fn cmd_rollout(args: &RolloutArgs) -> CliResult {
    let (resolved, l) = load_scenario(&args.scenario, args.seed, args.grad_mode)?;
    let suite = AblationSuite::parse_list(&args.variants).map_err(input)?;
    if args.rollouts == 0 {
        return Err(CliError::Config("--rollouts must be >= 1".into()));
    }
    let config = AblationConfig {
        n_scenarios: 1,
        n_rollouts: args.rollouts,
        seed: l.scenario.seed,
        bounds: ScenarioBounds::default(),
        optimizer: l.optimizer.clone(),
        worst_case_factor: l.worst_case_factor,
    };
    let meta = Meta::new("rollout", l.scenario.seed, &resolved);
    let result = evaluate_scenario(0, l.scenario, &config, &suite).map_err(failed)?;
    let table = tabulate(&config, &suite, vec![result], Vec::new()).map_err(failed)?;
    write_table(&args.out, &table, &meta, "rollout")?;
    print_table(&table);
    Ok(())
}

fn cmd_ablation(args: &AblationArgs) -> CliResult {
    let mut file = match &args.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Config(format!("config file not found: {}", p.display())));
        }
        Some(p) => AblationFile::load(p).map_err(input)?,
        None => AblationFile::default(),
    };
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(n) = args.scenarios {
        file.scenarios = n;
    }
    if let Some(n) = args.rollouts {
        file.rollouts = n;
    }
    if let Some(v) = &args.variants {
        file.variants = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    match args.grad_mode {
        Some(GradMode::Analytic) => file.optimizer.gradient = io::GradientSpec::Analytic,
        Some(GradMode::Fd) => file.optimizer.gradient = io::GradientSpec::FiniteDifference,
        None => {}
    }
    let (config, suite) = file.resolve().map_err(input)?;
    let meta = Meta::new("ablation", config.seed, &file);
    let table = surestep::sim_harness::run_ablation(&config, &suite).map_err(failed)?;
    write_table(&args.out, &table, &meta, "ablation")?;
    print_table(&table);
    println!("scenarios failed: {}/{}", table.failures.len(), config.n_scenarios);
    for f in &table.failures {
        println!("  scenario {}: {}", f.index, f.cause);
    }
    if table.failure_fraction() > MAX_FAILURE_FRACTION {
        return Err(CliError::Failed(format!(
            "{} of {} scenarios failed",
            table.failures.len(),
            config.n_scenarios
        )));
    }
    Ok(())
}

fn cmd_propagate(args: &PropagateArgs) -> CliResult {
    let (resolved, l) = load_scenario(&args.scenario, args.seed, None)?;
    let traj = match &args.trajectory {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read trajectory file '{}': {e}", p.display())))?;
            io::read_trajectory_json(&text).map_err(input)?
        }
        None => make_baseline(&l.scenario).map_err(input)?,
    };
    check_endpoints(&traj, &l)?;
    let meta = Meta::new("propagate", l.scenario.seed, &resolved);
    let trace = l.scenario.propagate_ml(&traj).map_err(failed)?;
    prepare_out(&args.out)?;
    write(&args.out, "trace.json", &io::trace_json(&trace, &meta))?;
    write(
        &args.out,
        "plot.csv",
        &io::plot_csv(&[("trajectory", &traj, &trace)], &l.scenario.cameras, &meta),
    )?;
    let fin = trace.final_belief();
    println!("final trace: {:.6e}", fin.trace());
    match entropy(fin) {
        Ok(h) => println!("final entropy: {h:.6e}"),
        Err(e) => println!("final entropy: undefined ({e})"),
    }
    Ok(())
}

fn check_endpoints(traj: &Trajectory, l: &LoadedScenario) -> CliResult {
    if traj.horizon() != l.scenario.horizon {
        return Err(CliError::Config(format!(
            "trajectory horizon {} does not match scenario horizon {}",
            traj.horizon(),
            l.scenario.horizon
        )));
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult {
    let (_, l) = load_scenario(&args.scenario, None, None)?;
    if !(args.fd_step > 0.0) {
        return Err(CliError::Config("--fd-step must be positive".into()));
    }
    let traj = make_baseline(&l.scenario).map_err(input)?;
    let mut problem = l.scenario.problem(l.mask);
    problem.noise = worst_case_scale(&l.scenario.noise, l.worst_case_factor).map_err(input)?;
    let mut analytic = gradient(&traj, &problem, GradientMode::Analytic, args.fd_step).map_err(failed)?;
    let numeric = gradient(&traj, &problem, GradientMode::FiniteDifference, args.fd_step).map_err(failed)?;
    if args.corrupt_gradient {
        for g in analytic.iter_mut() {
            *g *= 1.01;
        }
        if analytic.len() > 2 {
            analytic[1][0] += 1e-3;
        }
    }
    let err = gradient_relative_error(&analytic, &numeric);
    println!("max relative error: {err:.3e} (tolerance {GRADIENT_TOLERANCE:.0e})");
    if err <= GRADIENT_TOLERANCE {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(CliError::Gradient(format!(
            "gradient check failed: {err:.3e} > {GRADIENT_TOLERANCE:.0e}"
        )))
    }
}

fn cmd_sample(args: &SampleArgs) -> CliResult {
    let bounds = ScenarioBounds::default();
    let s = sample_scenario(args.seed, &bounds).map_err(failed)?;
    let file = ScenarioFile::from_scenario(&s, &Default::default(), &Default::default(), 1.0);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_out(dir)?;
    }
    let text = file.to_toml().map_err(input)?;
    fs::write(&args.out, text).map_err(|e| CliError::Io(format!("cannot write '{}': {e}", args.out.display())))
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Optimize(a) => cmd_optimize(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Ablation(a) => cmd_ablation(a),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Sample(a) => cmd_sample(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.parallel {
        Some(0) => Err(CliError::Config("--parallel must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Config(format!("cannot start {n} workers: {e}"))),
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
