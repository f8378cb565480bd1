//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::algorithms::RunOptions;
use crate::error::{Error, Result};
use crate::model::{generate_instance, BanditInstance, WeightSpec};
use crate::optimizer::{complexity, ComplexityKind};
use crate::simulation::{run_experiment, run_seed, AlgorithmSpec, Environment, ExperimentSummary};

#[derive(Debug, Parser)]
#[command(
    name = "collab-bandit",
    version,
    about = "Weighted collaborative best-arm identification"
)]
pub struct Cli {
    /// Increase log verbosity (-v info with phase traces, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random instance with a floor on the smallest mixed gap.
    Gen(GenArgs),
    /// Solve complexity programs for an instance.
    Complexity(ComplexityArgs),
    /// Execute one run and print its result.
    Run(RunArgs),
    /// Repeat runs and report summary statistics.
    Experiment(ExperimentArgs),
    /// Repeat experiments over lists of confidence levels and personalization levels.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    WcpeBai,
    WcpeTopn,
    PfucbBai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Base seed; falls back to COLLAB_BANDIT_SEED, then 0.
    #[arg(long, env = "COLLAB_BANDIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long = "K")]
    pub arms: usize,
    #[arg(long = "M")]
    pub agents: usize,
    /// Personalization level of the weight matrix.
    #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
    pub alpha: Option<f64>,
    /// JSON file with a weight matrix (a weight spec object or a bare matrix).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Minimal smallest mixed gap.
    #[arg(long, default_value_t = 0.05)]
    pub floor: f64,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Kinds to compute (T_STAR, T_TILDE, C_STAR, C_TILDE, N_STAR, N_TILDE).
    #[arg(long, value_delimiter = ',', default_values = ["T_STAR", "T_TILDE"])]
    pub kinds: Vec<ComplexityKind>,
    /// Override the instance weights: `identity`, `alpha=<x>`, or a JSON file.
    #[arg(long)]
    pub weights: Option<String>,
    /// N for the top-N kinds.
    #[arg(long = "N")]
    pub top_n: Option<usize>,
    #[arg(long, value_enum, default_value_t = TableFormat::Table)]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct AlgorithmArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::WcpeBai)]
    pub algorithm: Algorithm,
    /// Personalization level for pfucb-bai; defaults to the instance's own.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// N for wcpe-topn.
    #[arg(long = "N")]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub algo: AlgorithmArgs,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Compare estimates with the true means at every phase.
    #[arg(long)]
    pub instrument: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub algo: AlgorithmArgs,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Number of repetitions.
    #[arg(long = "R", default_value_t = 100)]
    pub runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub algo: AlgorithmArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1])]
    pub delta: Vec<f64>,
    /// Personalization levels; each reweights the instance.
    #[arg(long = "alphas", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long = "R", default_value_t = 100)]
    pub runs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Tidy CSV with one row per configuration; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

fn read_weight_file(path: &Path) -> Result<WeightSpec> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(spec) = serde_json::from_str::<WeightSpec>(&text) {
        return Ok(spec);
    }
    let values: Vec<Vec<f64>> = serde_json::from_str(&text)?;
    Ok(WeightSpec::Matrix { values })
}

fn parse_weight_override(value: &str, agents: usize) -> Result<WeightSpec> {
    if value == "identity" {
        return Ok(WeightSpec::identity(agents));
    }
    if let Some(alpha) = value.strip_prefix("alpha=") {
        let alpha: f64 = alpha
            .parse()
            .map_err(|_| Error::Domain(format!("cannot parse personalization level {alpha:?}")))?;
        check_alpha(alpha)?;
        return Ok(WeightSpec::Personalization { alpha });
    }
    read_weight_file(Path::new(value))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Resolves the algorithm flags against an instance.
fn algorithm_spec(args: &AlgorithmArgs, instance: &BanditInstance) -> Result<AlgorithmSpec> {
    match args.algorithm {
        Algorithm::WcpeBai => Ok(AlgorithmSpec::WcpeBai),
        Algorithm::WcpeTopn => {
            let n = args
                .top_n
                .ok_or_else(|| Error::Domain("wcpe-topn requires --N".into()))?;
            if n == 0 || n > instance.arms() {
                return Err(Error::Domain(format!("--N must lie in 1..={}", instance.arms())));
            }
            Ok(AlgorithmSpec::WcpeTopn { n })
        }
        Algorithm::PfucbBai => {
            let alpha = args
                .alpha
                .or(instance.weight_spec().alpha())
                .ok_or_else(|| Error::Domain("pfucb-bai requires --alpha or personalization weights".into()))?;
            check_alpha(alpha)?;
            Ok(AlgorithmSpec::PfucbBai { alpha })
        }
    }
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = jobs {
        if jobs == 0 {
            return Err(Error::Domain("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(jobs);
    }
    builder
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker threads: {e}")))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = match (&args.alpha, &args.weights) {
        (Some(alpha), _) => {
            check_alpha(*alpha)?;
            WeightSpec::Personalization { alpha: *alpha }
        }
        (None, Some(path)) => read_weight_file(path)?,
        (None, None) => return Err(Error::Domain("gen requires --alpha or --weights".into())),
    };
    let generated = generate_instance(args.arms, args.agents, &spec, args.seed.seed, args.floor)?;
    log::info!("accepted after {} attempts", generated.attempts);
    write_output(args.output.as_deref(), &generated.instance.to_json()?)
}

#[derive(Debug, Serialize)]
struct ComplexityRow {
    kind: String,
    value: f64,
    kkt_residual: f64,
}

fn cmd_complexity(args: &ComplexityArgs) -> Result<()> {
    let mut instance = BanditInstance::load(&args.instance)?;
    if let Some(weights) = &args.weights {
        instance = instance.with_weights(parse_weight_override(weights, instance.agents())?)?;
    }
    let view = instance.mixed_view()?;
    let needs_top = args
        .kinds
        .iter()
        .any(|k| matches!(k, ComplexityKind::NStar | ComplexityKind::NTilde));
    let top = match (needs_top, args.top_n) {
        (false, _) => None,
        (true, Some(n)) => Some(view.topn(n)?),
        (true, None) => return Err(Error::Domain("top-N kinds require --N".into())),
    };
    let mut rows = Vec::new();
    for &kind in &args.kinds {
        let c = complexity(kind, &instance, &view, top.as_ref())?;
        rows.push(ComplexityRow {
            kind: kind.name().to_string(),
            value: c.value,
            kkt_residual: c.allocation.kkt_residual,
        });
    }
    let text = match args.format {
        TableFormat::Json => serde_json::to_string_pretty(&rows)? + "\n",
        TableFormat::Table => {
            let mut out = format!("{:<8} {:>16} {:>12}\n", "kind", "value", "kkt_residual");
            for row in &rows {
                out += &format!("{:<8} {:>16.6} {:>12.3e}\n", row.kind, row.value, row.kkt_residual);
            }
            out
        }
    };
    write_output(None, &text)
}

fn cmd_run(args: &RunArgs, verbose: u8) -> Result<()> {
    check_delta(args.delta)?;
    let instance = BanditInstance::load(&args.algo.instance)?;
    let spec = algorithm_spec(&args.algo, &instance)?;
    let mut env = Environment::new(&instance, run_seed(args.seed.seed, 0));
    let opts = RunOptions {
        trace: verbose > 0,
        instrument: args.instrument,
    };
    let mut result = spec.run(&mut env, args.delta, opts)?;
    if let Some(phases) = result.phases.take() {
        let mut err = std::io::stderr().lock();
        for phase in &phases {
            writeln!(err, "{}", serde_json::to_string(phase)?)?;
        }
    }
    write_output(None, &(serde_json::to_string_pretty(&result)? + "\n"))
}

fn summary_text(label: &str, s: &ExperimentSummary) -> String {
    let mut out = format!(
        "algorithm  {label}\nruns       {}\nc_hat      {:.0} ± {}\nr_hat      {:.2} ± {}\ndelta_hat  {:.2}\n",
        s.runs, s.c_hat, s.c_std, s.r_hat, s.r_std, s.delta_hat
    );
    if let Some(c) = s.c_star {
        out += &format!("c_star     {c}\n");
    }
    if let Some(ratio) = s.cost_ratio() {
        out += &format!("c_hat/c*   {ratio:.1}\n");
    }
    out
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    check_delta(args.delta)?;
    let instance = BanditInstance::load(&args.algo.instance)?;
    let spec = algorithm_spec(&args.algo, &instance)?;
    let pool = thread_pool(args.jobs)?;
    let report = pool.install(|| run_experiment(&instance, spec, args.delta, args.runs, args.seed.seed))?;
    log::info!("{} runs in {:.2}s", report.summary.runs, report.summary.wall_time);
    if let Some(path) = &args.output {
        match args.format {
            Format::Json => report.write_json(path)?,
            Format::Csv => report.write_csv(std::fs::File::create(path)?)?,
        }
    }
    write_output(None, &summary_text(spec.label(), &report.summary))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    algorithm: &'static str,
    alpha: Option<f64>,
    delta: f64,
    runs: usize,
    c_hat: f64,
    c_std: u64,
    r_hat: f64,
    r_std: u64,
    delta_hat: f64,
    c_star: Option<u64>,
    c_ratio: Option<f64>,
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    args.delta.iter().try_for_each(|&d| check_delta(d))?;
    args.alphas.iter().try_for_each(|&a| check_alpha(a))?;
    let base = BanditInstance::load(&args.algo.instance)?;
    let pool = thread_pool(args.jobs)?;
    let mut configs: Vec<(BanditInstance, AlgorithmSpec, Option<f64>)> = Vec::new();
    if args.alphas.is_empty() {
        let spec = algorithm_spec(&args.algo, &base)?;
        configs.push((base.clone(), spec, base.weight_spec().alpha()));
    } else {
        for &alpha in &args.alphas {
            let instance = base.with_weights(WeightSpec::Personalization { alpha })?;
            let algo = AlgorithmArgs {
                instance: args.algo.instance.clone(),
                algorithm: args.algo.algorithm,
                alpha: Some(alpha),
                top_n: args.algo.top_n,
            };
            let spec = algorithm_spec(&algo, &instance)?;
            configs.push((instance, spec, Some(alpha)));
        }
    }
    let mut writer = match &args.output {
        Some(path) => csv::Writer::from_writer(Box::new(std::fs::File::create(path)?) as Box<dyn Write>),
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn Write>),
    };
    for (instance, spec, alpha) in &configs {
        for &delta in &args.delta {
            let report = pool.install(|| run_experiment(instance, *spec, delta, args.runs, args.seed.seed))?;
            let s = &report.summary;
            writer.serialize(SweepRow {
                algorithm: spec.label(),
                alpha: *alpha,
                delta,
                runs: s.runs,
                c_hat: s.c_hat,
                c_std: s.c_std,
                r_hat: s.r_hat,
                r_std: s.r_std,
                delta_hat: s.delta_hat,
                c_star: s.c_star,
                c_ratio: s.cost_ratio(),
            })?;
            writer.flush()?;
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Complexity(args) => cmd_complexity(args),
        Command::Run(args) => cmd_run(args, cli.verbose),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
