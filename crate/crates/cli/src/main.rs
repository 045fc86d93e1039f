//! `accomp`: command-line driver for corpus building, codec training,
//! tokenization, training, inference, evaluation, baselines and full
//! experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use accomp_core::experiment::{StageError, OUTPUT_ROOT_ENV};
use accomp_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "accomp", version, about = "Vocal-to-accompaniment generation over discrete audio codes")]
pub struct Cli {
    /// Experiment config file (TOML or JSON); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given: default, desk or smoke.
    #[arg(long, global = true, default_value = "default")]
    pub profile: String,
    /// Root directory for outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
    /// Worker cap. Stages run serially.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Semantic and acoustic codecs.
    #[command(subcommand)]
    Codec(CodecCommand),
    /// Tokenize the training split for one condition.
    Tokenize(TokenizeArgs),
    /// Train the main model or the fine-stage model.
    Train(TrainArgs),
    /// Generate an accompaniment for a vocal.
    Infer(InferArgs),
    /// FAD and NLL on the evaluation split.
    Evaluate(EvaluateArgs),
    /// Retrieval and random baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Greedy continuation of training semantic prefixes.
    ProbeMemorization(ProbeArgs),
    /// Run every stage of one experiment with caching.
    Experiment(ExperimentArgs),
    /// Tabulate experiment reports.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    Build(CorpusBuildArgs),
}

#[derive(Debug, Args)]
pub struct CorpusBuildArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub leakage_db: Option<f64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Fraction of training clips rendered with a near-silent instrumental.
    #[arg(long)]
    pub quiet_fraction: Option<f64>,
    /// Keep every training clip.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CodecCommand {
    /// Train both codecs on the kept training clips.
    Train(CodecTrainArgs),
    /// Dump the semantic, coarse and fine codes of a WAV file.
    Encode(CodecEncodeArgs),
}

#[derive(Debug, Args)]
pub struct CodecTrainArgs {
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub semantic_k: Option<usize>,
    #[arg(long)]
    pub codebook_size: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CodecEncodeArgs {
    #[arg(long)]
    pub codec_dir: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub codec_dir: PathBuf,
    /// Condition such as `noisy/s-sa`.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus_dir: PathBuf,
    #[arg(long)]
    pub codec_dir: PathBuf,
    /// Tokenized training data (main model).
    #[arg(long, required_unless_present = "stage3")]
    pub tokens_dir: Option<PathBuf>,
    /// Fine-stage checkpoint used for dev-FAD selection (main model).
    #[arg(long, required_unless_present = "stage3")]
    pub stage3_ckpt: Option<PathBuf>,
    /// Train the fine-stage model instead of the main model.
    #[arg(long)]
    pub stage3: bool,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub relative_positions: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub vocal: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub stage3_ckpt: PathBuf,
    #[arg(long)]
    pub codec_dir: PathBuf,
    /// One of sa-sa, s-sa, a-sa, sa-a, a-a.
    #[arg(long, default_value = "sa-sa")]
    pub featurization: String,
    /// Add the training-time input noise.
    #[arg(long)]
    pub noisy: bool,
    #[arg(long, default_value_t = accomp_core::inference::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sliding-window generation for inputs longer than one window.
    #[arg(long)]
    pub long: bool,
    #[arg(long, default_value_t = 10.0)]
    pub window_s: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hop_s: f64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VocalKindArg {
    Both,
    Isolated,
    Separated,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub stage3_ckpt: PathBuf,
    #[arg(long)]
    pub codec_dir: PathBuf,
    /// Corpus directory holding the evaluation split.
    #[arg(long)]
    pub eval_dir: PathBuf,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, value_enum, default_value_t = VocalKindArg::Both)]
    pub vocal_kind: VocalKindArg,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_clips: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Render and index a retrieval pool.
    Pool(PoolArgs),
    /// Key-nearest, tempo-matched instrumental for a vocal.
    Retrieve(RetrieveArgs),
    /// A uniformly random pool excerpt.
    Random(RandomArgs),
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub n_tracks: Option<usize>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub vocal: PathBuf,
    #[arg(long)]
    pub pool_dir: PathBuf,
    /// Query tempo in BPM.
    #[arg(long, conflicts_with = "instrumental")]
    pub tempo: Option<f64>,
    /// Estimate the query tempo from this instrumental.
    #[arg(long)]
    pub instrumental: Option<PathBuf>,
    /// Output mix (vocal plus retrieved instrumental).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[arg(long)]
    pub pool_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mix the excerpt under this vocal and match its length.
    #[arg(long)]
    pub vocal: Option<PathBuf>,
    /// Excerpt length when no vocal is given.
    #[arg(long, default_value_t = 10.0)]
    pub duration_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tokens_dir: PathBuf,
    #[arg(long)]
    pub codec_dir: PathBuf,
    /// Prefix lengths; defaults to the standard grid scaled to the clip.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Number of training clips probed.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub condition: Option<String>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub relative_positions: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(s) = cause.downcast_ref::<StageError>() {
            return if s.stage == "config" { EXIT_CONFIG } else { EXIT_STAGE };
        }
        if let Some(Error::Config(_)) = cause.downcast_ref::<Error>() {
            return EXIT_CONFIG;
        }
    }
    EXIT_STAGE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
