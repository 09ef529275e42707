//! Command-line front end for the policy-customization toolkit.
//!
//! Five subcommands cover the workflow end to end: `solve` (exact soft
//! optimum of a serialized MDP), `customize` (one method on one named
//! environment), `plan` (a single tree search from a given state), `run`
//! (a full experiment from a JSON config), and `report` (re-render a
//! stored JSON report).
//!
//! Exit codes: 0 success; 2 configuration error (bad flags, malformed or
//! semantically invalid config/input); 3 method failure (a requested
//! method errored — `run` still writes the partial report); 4 I/O error;
//! 1 for unexpected internal failures. The `RQLAB_THREADS` environment
//! variable caps evaluation parallelism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rqlab::envs::{make_env, EnvSpec};
use rqlab::error::{Error, Result};
use rqlab::harness::{
    build_method_policy, build_prior, emit_report, run_experiment, ExperimentConfig, MethodSpec,
    OutputFormat, PriorSpec,
};
use rqlab::mcts::plan;
use rqlab::mdp::RewardSelector;
use rqlab::residual::CustomizationParams;
use rqlab::soft::{boltzmann_policy, soft_value_iteration, SoftSolverParams};
use rqlab::{DiscreteMdp64, MctsParams64};

#[derive(Parser)]
#[command(
    name = "rqlab",
    version,
    about = "Maximum-entropy RL policy customization on discrete benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exact soft optimum of a serialized MDP and emit the
    /// Q-table with its Boltzmann policy.
    Solve(SolveArgs),
    /// Run one customization method against an oracle prior on a named
    /// environment and emit the resulting policy table.
    Customize(CustomizeArgs),
    /// Run a single residual tree search from a given state and dump the
    /// search tree.
    Plan(PlanArgs),
    /// Run a full experiment from a JSON configuration file.
    Run(RunArgs),
    /// Re-render a stored JSON report in another format.
    Report(ReportArgs),
}

/// Report rendering selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Path to a serialized MDP (JSON with discount, transitions, rewards,
    /// terminal flags).
    #[arg(long)]
    model: PathBuf,
    /// Reward channel to solve.
    #[arg(long, value_enum, default_value_t = ChannelArg::Basic)]
    channel: ChannelArg,
    /// Basic-reward weight for the combined channel.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Entropy temperature.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Sup-norm solve tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Directory for solution.json; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    Basic,
    Addon,
    Combined,
}

#[derive(Args)]
struct CustomizeArgs {
    /// Environment name (bandit-2, two-state-loop, centering-chain,
    /// discrete-mountain-car, grid-highway, grid-parking).
    #[arg(long)]
    env: String,
    /// Method tag (rql-exact, rql-td, rql-spi, mcts, greedy, kl-reward,
    /// likelihood-aug, rl-full); method knobs take their defaults — use
    /// `run` with a config file for full control.
    #[arg(long)]
    method: String,
    /// Oracle-prior temperature.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Training seed for sample-based methods.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for policy.json; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Environment name.
    #[arg(long)]
    env: String,
    /// Root state index.
    #[arg(long)]
    state: usize,
    /// Search RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Search iteration budget.
    #[arg(long, default_value_t = 150)]
    iterations: usize,
    /// Planning horizon.
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    /// Oracle-prior temperature.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Directory for plan.json; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (JSON; unknown keys are errors).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's evaluation seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restricts report output to one format.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct ReportArgs {
    /// Stored JSON report to re-render.
    #[arg(long)]
    input: PathBuf,
    /// Directory for the rendered file(s); prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rendering to produce.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Maps an error to the documented exit code family.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidModel(_)
        | Error::OutOfRange { .. } => 2,
        Error::NonConvergence { .. } | Error::EpisodeFinished => 1,
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Solve(args) => solve(args),
        Command::Customize(args) => customize(args),
        Command::Plan(args) => plan_once(args),
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
    }
}

/// Prints to stdout, treating a closed pipe (e.g. `rqlab … | head`) as a
/// normal end of output rather than a failure.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::Io(e)),
    }
}

/// Writes `text` to `directory/file_name`, or prints it when no directory
/// was requested.
fn deliver(text: &str, directory: Option<&Path>, file_name: &str) -> Result<()> {
    match directory {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file_name);
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => print_stdout(text),
    }
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.model)?;
    let mdp: DiscreteMdp64 = serde_json::from_str(&text)?;
    rqlab::mdp::validate_mdp(&mdp).into_result()?;
    let selector = match args.channel {
        ChannelArg::Basic => RewardSelector::Basic,
        ChannelArg::Addon => RewardSelector::Addon,
        ChannelArg::Combined => RewardSelector::Combined { omega: args.omega },
    };
    let solver = SoftSolverParams {
        alpha: args.alpha,
        tol: args.tol,
        max_iter: 1_000_000,
    };
    let q = soft_value_iteration(&mdp, selector, &solver)?;
    let policy = boltzmann_policy(&q, args.alpha)?;
    let payload = serde_json::json!({
        "channel": format!("{:?}", args.channel).to_lowercase(),
        "alpha": args.alpha,
        "q": q,
        "policy": policy,
    });
    let mut text = serde_json::to_string_pretty(&payload)?;
    text.push('\n');
    deliver(&text, args.out.as_deref(), "solution.json")?;
    Ok(ExitCode::SUCCESS)
}

fn customize(args: CustomizeArgs) -> Result<ExitCode> {
    let spec = EnvSpec::by_name(&args.env)?;
    let method: MethodSpec =
        serde_json::from_value(serde_json::json!({ "method": args.method }))
            .map_err(|_| Error::Config(format!("unknown method '{}'", args.method)))?;
    method.validate()?;
    let (_, mdp) = make_env::<f64>(&spec)?;
    let prior = build_prior(&mdp, &PriorSpec::Oracle { alpha: args.alpha })?;
    let params = CustomizationParams::<f64>::default().with_gamma(mdp.discount());
    let policy = match build_method_policy(&mdp, &spec, &prior, &params, &method, 0, args.seed) {
        Ok(policy) => policy,
        Err(e @ Error::NonConvergence { .. }) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(3));
        }
        Err(e) => return Err(e),
    };
    let mut text = serde_json::to_string_pretty(&policy)?;
    text.push('\n');
    deliver(&text, args.out.as_deref(), "policy.json")?;
    Ok(ExitCode::SUCCESS)
}

fn plan_once(args: PlanArgs) -> Result<ExitCode> {
    let spec = EnvSpec::by_name(&args.env)?;
    let (_, mdp) = make_env::<f64>(&spec)?;
    let prior = build_prior(&mdp, &PriorSpec::Oracle { alpha: args.alpha })?;
    let params = MctsParams64::default()
        .with_iter_max(args.iterations)
        .with_horizon(args.horizon)
        .with_gamma(mdp.discount());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (tree, chosen) = plan(args.state, &mdp, &prior, &params, &mut rng)?;
    let payload = serde_json::json!({
        "root_state": args.state,
        "chosen_action": chosen,
        "tree": tree,
    });
    let mut text = serde_json::to_string_pretty(&payload)?;
    text.push('\n');
    deliver(&text, args.out.as_deref(), "plan.json")?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(out) = args.out {
        config.output.directory = Some(out);
    }
    if let Some(seed) = args.seed {
        config.evaluation.seeds = vec![seed];
    }
    if let Some(format) = args.format {
        config.output.formats = vec![format.into()];
    }
    let outcome = run_experiment(&config)?;
    print_stdout(&outcome.table.to_csv_string())?;
    for file in &outcome.files {
        eprintln!("wrote {}", file.display());
    }
    if outcome.fully_succeeded() {
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &outcome.failures {
            eprintln!("method {} failed: {}", failure.label, failure.message);
        }
        Ok(ExitCode::from(3))
    }
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.input)?;
    let table: rqlab::harness::MetricsTable = serde_json::from_str(&text)?;
    table.validate()?;
    match args.out {
        Some(dir) => {
            let files = emit_report(&table, &dir, &[args.format.into()])?;
            for file in files {
                eprintln!("wrote {}", file.display());
            }
        }
        None => match args.format {
            FormatArg::Csv => print_stdout(&table.to_csv_string())?,
            FormatArg::Json => {
                let mut rendered = serde_json::to_string_pretty(&table)?;
                rendered.push('\n');
                print_stdout(&rendered)?;
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}
