use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "retinev", version, about = "Event-guided low-light image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize degraded timestamp maps from ground-truth images.
    Synth(SynthArgs),
    /// Build the procedural train/test benchmark.
    Benchmark(BenchmarkArgs),
    /// Pretrain the illumination denoiser.
    Pretrain(TrainArgs),
    /// Train all networks jointly.
    Train(TrainArgs),
    /// Enhance one low-light image with its events.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on a paired dataset.
    Evaluate(EvaluateArgs),
    /// Measure inference latency.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory of ground-truth PNG images.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory (must not exist).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Output directory; `train/` and `test/` are created inside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub train: usize,
    #[arg(long, default_value_t = 4)]
    pub test: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue a checkpoint of the same stage and config.
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Start from another checkpoint's weights, e.g. a pretrained denoiser.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Low-light PNG image.
    #[arg(long)]
    pub low: PathBuf,
    /// Raw events, binary (`.evtm`) or `x,y,t,p` CSV (`.csv`).
    #[arg(long, conflicts_with = "fpe", required_unless_present = "fpe")]
    pub events: Option<PathBuf>,
    /// Precomputed first-positive-event timestamp map.
    #[arg(long)]
    pub fpe: Option<PathBuf>,
    /// Brightness coefficient; larger values brighten dark regions.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the illumination and reflectance maps into this directory.
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root with `low/`, `high/` and `fpe/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly initialized default model when omitted.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Frame size as `WIDTHxHEIGHT`.
    #[arg(long, default_value = "640x480")]
    pub size: String,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Pretrain(a) => commands::train(a, true),
        Command::Train(a) => commands::train(a, false),
        Command::Enhance(a) => commands::enhance(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
