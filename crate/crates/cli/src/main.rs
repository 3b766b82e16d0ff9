//! `tabmoe`: tune, train, evaluate, benchmark and rank tabular MLP and
//! mixture-of-experts models.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tabmoe::data::{synth, write_bundle, SynthKind, SynthSpec};

use config::{Mode, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "tabmoe", version, about = "Benchmark MLP, MoE and Gumbel-softmax MoE models on tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Run configuration (JSON); its `mode` selects the command when none is given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seeds.base` and `search_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress (-v) or details (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Random search over each model's hyperparameter space.
    Tune,
    /// Train each tuned model once and save a checkpoint.
    Train,
    /// Score saved checkpoints on the validation and test splits.
    Evaluate,
    /// Multi-seed test scores, ranking and timings for every model.
    Benchmark,
    /// Rank stored score summaries.
    Rank {
        /// Summaries JSON; defaults to the benchmark output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Parameter counts of tuned configurations and trials.
    CountParams,
    /// Training time and repeated inference timing.
    Time,
    /// Write a synthetic dataset (manifest and CSV splits) to `--out`.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthChoice {
    Linear,
    Blobs,
    Xor,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthChoice,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Distance between blob centres in units of the noise scale.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Input("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds.base = s;
        cfg.search_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let command = match &cli.command {
        Some(c) => c,
        None => {
            let cfg = load_config(&cli)?;
            let mode = cfg
                .mode
                .ok_or_else(|| CliError::Input("give a command or set `mode` in the config".into()))?;
            return run_mode(mode, &cfg);
        }
    };
    match command {
        Command::Synth(args) => synth_cmd(&cli, args),
        Command::Rank { input } if cli.config.is_none() => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
            commands::rank(&out, input.as_deref())
        }
        Command::Rank { input } => {
            let cfg = load_config(&cli)?;
            commands::rank(&cfg.out, input.as_deref())
        }
        Command::Tune => run_mode(Mode::Tune, &load_config(&cli)?),
        Command::Train => run_mode(Mode::Train, &load_config(&cli)?),
        Command::Evaluate => run_mode(Mode::Evaluate, &load_config(&cli)?),
        Command::Benchmark => run_mode(Mode::Benchmark, &load_config(&cli)?),
        Command::CountParams => run_mode(Mode::CountParams, &load_config(&cli)?),
        Command::Time => run_mode(Mode::Time, &load_config(&cli)?),
    }
}

fn run_mode(mode: Mode, cfg: &RunConfig) -> CliResult<()> {
    match mode {
        Mode::Tune => commands::tune(cfg),
        Mode::Train => commands::train(cfg),
        Mode::Evaluate => commands::evaluate(cfg),
        Mode::Benchmark => commands::benchmark(cfg),
        Mode::Rank => commands::rank(&cfg.out, None),
        Mode::CountParams => commands::count_params_cmd(cfg),
        Mode::Time => commands::time(cfg),
    }
}

fn synth_cmd(cli: &Cli, args: &SynthArgs) -> CliResult<()> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::Input("synth needs --out <dir>".into()))?;
    let kind = match args.kind {
        SynthChoice::Linear => SynthKind::Linear,
        SynthChoice::Xor => SynthKind::Xor,
        SynthChoice::Blobs => SynthKind::Blobs {
            classes: args.classes,
            separation: args.separation,
        },
    };
    let spec = SynthSpec {
        kind,
        n: args.n,
        n_features: args.features,
        noise: args.noise,
        seed: cli.seed.unwrap_or(0),
    };
    let manifest = write_bundle(&synth(&spec)?, out)?;
    println!("{}", manifest.display());
    Ok(())
}
