use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use convseq::conv::NormalizerKind;
use convseq::model::Mechanism;
use convseq::train::{OptimizerKind, ScheduleKind, TaskKind};

#[derive(Debug, Parser)]
#[command(name = "convseq", version, about = "Lightweight and dynamic convolution sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a synthetic task and write the evaluation log.
    Train(TrainArgs),
    /// Decode token sequences with a trained checkpoint.
    Decode(DecodeArgs),
    /// Analytic and measured cost of attention and convolutions.
    Bench(BenchArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Kernel weight counts: non-separable, depthwise, shared.
    Params(ParamsArgs),
    /// Cumulative-feature ablation grid on a synthetic task.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub mechanism: Option<Mechanism>,
    /// Blocks on each side.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Kernel widths per layer for both sides, e.g. 3,7.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub encoder_kernels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub decoder_kernels: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub glu: Option<bool>,
    #[arg(long)]
    pub dropconnect: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub normalizer: Option<NormalizerKind>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub windowed_attention: Option<bool>,
    #[arg(long)]
    pub max_positions: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TaskArgs {
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Held-out examples used for evaluation.
    #[arg(long)]
    pub heldout: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct OptimArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub warmup: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop once held-out token accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Batches accumulated per update.
    #[arg(long)]
    pub accumulate: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Evaluation log destination; stdout when absent.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source token ids separated by spaces or commas.
    #[arg(long)]
    pub input: String,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Defaults to twice the input length plus 10.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set, default_value_t = false)]
    pub greedy: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 16)]
    pub heads: usize,
    #[arg(long, default_value_t = 31)]
    pub k: usize,
    /// Timed runs per configuration (0 skips timing).
    #[arg(long, default_value_t = 11)]
    pub repeats: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set, default_value_t = false)]
    pub all: bool,
    /// Modules to check, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub module: Vec<String>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d: u64,
    #[arg(long)]
    pub k: u64,
    #[arg(long)]
    pub heads: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Fixed kernel width of the first two variants.
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Splice the pairs of every `--config <file>` in as flags right after the
/// subcommand, so flags given on the command line take precedence.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut files = Vec::new();
    let mut it = argv.iter().enumerate().skip(1);
    while let Some((_, a)) = it.next() {
        if a == "--config" {
            if let Some((_, path)) = it.next() {
                files.push(path.clone());
            }
        } else if let Some(path) = a.strip_prefix("--config=") {
            files.push(path.to_string());
        }
    }
    if files.is_empty() || argv.len() < 2 {
        return Ok(argv);
    }
    let mut injected = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
        for (key, value) in convseq::kv::parse(&text).map_err(|e| format!("{path}: {e}"))? {
            if key == "config" {
                return Err(format!("{path}: config files cannot include other config files"));
            }
            injected.push(format!("--{key}"));
            if !value.is_empty() {
                injected.push(value);
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}
