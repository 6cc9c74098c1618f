mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowcert::classify::DecisionMode;
use flowcert::features::FeatureSet;
use flowcert::synth::Preset;

/// Known/unknown flow classification from subflow likelihood ratios.
#[derive(Debug, Parser)]
#[command(name = "flowcert", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic trace.
    Synth(SynthArgs),
    /// Dump per-subflow feature vectors as CSV.
    Extract(ExtractArgs),
    /// Train a model bundle (GBDT + likelihood table).
    Train(TrainArgs),
    /// Classify every flow of a capture against a bundle.
    Classify(ClassifyArgs),
    /// Run the full train/test experiment grid.
    Evaluate(EvaluateArgs),
    /// Per-class CDF of one feature.
    Cdf(CdfArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Capture: classic PCAP or packet-record text.
    #[arg(long)]
    pub input: PathBuf,
    /// Sidecar file of `flow_key label` lines.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub idle_timeout_s: Option<f64>,
    #[arg(long, value_enum)]
    pub bidirectional: Option<Toggle>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Packets per subflow.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub features: Option<FeatureSet>,
}

#[derive(Debug, Args)]
pub struct DecisionArgs {
    /// Certainty for both classes, e.g. 0.95.
    #[arg(long)]
    pub certainty: Option<f64>,
    #[arg(long)]
    pub certainty_known: Option<f64>,
    #[arg(long)]
    pub certainty_unknown: Option<f64>,
    #[arg(long)]
    pub min_subflows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Laplace smoothing for the likelihood table.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Row fraction sampled per tree.
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Share of training flows held back to fit the likelihood table.
    #[arg(long)]
    pub calibration_fraction: Option<f64>,
    /// Fit the likelihood table on the GBDT's own training subflows.
    #[arg(long)]
    pub calibrate_on_train: bool,
    /// Cap on training subflows per class (seeded sample).
    #[arg(long)]
    pub max_train_subflows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub flows_per_class: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub flows: FlowArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flows: FlowArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub flows: FlowArgs,
    /// Bundle written by `train` or `evaluate`.
    #[arg(long)]
    pub model: PathBuf,
    /// Must match the bundle's subflow size if given.
    #[arg(long)]
    pub n: Option<usize>,
    /// Must match the bundle's feature schema if given.
    #[arg(long)]
    pub features: Option<FeatureSet>,
    #[command(flatten)]
    pub decision: DecisionArgs,
    #[arg(long)]
    pub mode: Option<DecisionMode>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Synthetic preset to evaluate on (instead of --input/--labels).
    #[arg(long, conflicts_with = "input")]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub flows_per_class: Option<usize>,
    #[arg(long, requires = "labels")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub idle_timeout_s: Option<f64>,
    #[arg(long, value_enum)]
    pub bidirectional: Option<Toggle>,
    #[arg(long)]
    pub features: Option<FeatureSet>,
    /// Subflow sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Subflow-prefix fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Decision modes, comma separated.
    #[arg(long = "mode", value_delimiter = ',')]
    pub modes: Option<Vec<DecisionMode>>,
    /// Share of each class's flows used for training.
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Also score naive Bayes and KNN against the GBDT.
    #[arg(long)]
    pub baselines: bool,
    #[command(flatten)]
    pub decision: DecisionArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CdfArgs {
    #[command(flatten)]
    pub flows: FlowArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Feature name or index.
    #[arg(long)]
    pub feature: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Exit code 1 for usage problems, 2 for data problems.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<flowcert::Error>(),
            Some(flowcert::Error::InvalidArgument(_))
        ) || cause.downcast_ref::<commands::UsageError>().is_some()
    });
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
