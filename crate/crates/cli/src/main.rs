use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wmx_cli::{run, Command, Overrides, RunConfig};
use wmx_core::tensor::Precision;

#[derive(Parser)]
#[command(name = "wmx", version, about = "WaveletMixer wildfire forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dotted override, e.g. train.learning_rate=1e-4; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Generate a synthetic dataset and candidate catalog
    Synth,
    /// Exclusion filter and stratified negative sampling over a catalog
    Sample,
    /// Train and keep the best checkpoint per tracked metric
    Train,
    /// Zone- and year-stratified metrics of one checkpoint
    Eval,
    /// Per-sample fire probabilities
    Predict,
    /// Ensemble uncertainty decomposition, correlations and outcome means
    Uq,
    /// Selective-prediction risk-coverage curves
    Discard,
    /// Zoned Shapley attribution per channel
    Shap,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Sub::Synth => Command::Synth,
        Sub::Sample => Command::Sample,
        Sub::Train => Command::Train,
        Sub::Eval => Command::Eval,
        Sub::Predict => Command::Predict,
        Sub::Uq => Command::Uq,
        Sub::Discard => Command::Discard,
        Sub::Shap => Command::Shap,
    };
    let overrides = Overrides {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        set: cli.set,
        precision: cli.precision,
    };
    match RunConfig::resolve(&overrides).and_then(|cfg| run(cmd, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
