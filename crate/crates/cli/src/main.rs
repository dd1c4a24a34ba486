mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cl4ctr::augment::MaskMethod;
use cl4ctr::fi_encoder::EncoderKind;
use cl4ctr::metrics::BucketStatistic;
use cl4ctr::models::ModelKind;

use crate::config::parse_name;

#[derive(Parser, Debug)]
#[command(name = "cl4ctr", version, about = "Contrastive embedding regularization for CTR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a delimited file into train/val/test datasets and a vocabulary.
    Prepare(PrepareArgs),
    /// Generate the synthetic long-tail task.
    Synth(SynthArgs),
    /// Train a model and write its report and checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, overall and per feature-frequency bucket.
    Eval(EvalArgs),
    /// Run one training per setting along a hyperparameter axis.
    Sweep(SweepArgs),
    /// Print the default run configuration.
    Defaults,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Train/validation/test proportions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_delimiter = ',')]
    pub split: Vec<f64>,
    /// Seed for the split (falls back to CL4CTR_SEED, then 1).
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Column delimiter; `tab` is accepted.
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    #[arg(long, default_value = "label")]
    pub label: String,
    /// Comma-separated field columns (default: every non-label column).
    #[arg(long, value_delimiter = ',')]
    pub fields: Option<Vec<String>>,
    /// Tokens seen fewer times map to their field's OOV slot.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fields: Option<usize>,
    #[arg(long)]
    pub features_per_field: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Instance-sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub split: SplitArgs,
}

/// Flags that shadow keys of the run configuration.
#[derive(Args, Debug, Default, Clone)]
pub struct RunOverrides {
    /// Run configuration (TOML); see `cl4ctr defaults`.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Directory written by `prepare` or `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_parser = parse_name::<ModelKind>)]
    pub model: Option<ModelKind>,
    #[arg(long, value_parser = parse_name::<EncoderKind>)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_parser = parse_name::<MaskMethod>)]
    pub mask: Option<MaskMethod>,
    /// Mask proportion.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Global seed (falls back to CL4CTR_SEED, then the config).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared data directory; frequencies come from its training split.
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to score: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Checkpoint whose per-bucket log loss is the reference for the deltas.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value = "1,5,10,20,50,inf", value_delimiter = ',')]
    pub boundaries: Vec<f64>,
    #[arg(long, default_value = "min", value_parser = parse_name::<BucketStatistic>)]
    pub statistic: BucketStatistic,
    /// Directory for eval.json and buckets.csv (stdout only when absent).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// alpha_beta_grid, mask_proportion or embedding_size.
    #[arg(long)]
    pub axis: String,
    /// Values along the axis (defaults depend on the axis).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: RunOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Defaults => {
            print!("{}", config::RunConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
