use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mosfuse_core::predictor::TrainingMode;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mosfuse",
    version,
    about = "Mean opinion score prediction, unsupervised quality scoring and subsystem fusion"
)]
pub struct Cli {
    /// JSON run file; its section for the invoked command supplies flag values
    /// that explicit flags override
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic listener-rated corpus with its feature cache
    Synth(SynthArgs),
    /// Validate a rating manifest and split it into train/val manifests
    Prepare(PrepareArgs),
    /// Extract level-normalized log-mel features into a cache directory
    Features(FeaturesArgs),
    /// Train an SSL-MOS or LE-SSL-MOS predictor
    Train(TrainArgs),
    /// Score utterances with a trained predictor
    Predict(PredictArgs),
    /// SpeechLMScore: unit quantizer and unit language model
    #[command(subcommand)]
    Speechlm(SpeechlmCommand),
    /// ASR-confidence scores from token posteriors
    Confidence(ConfidenceArgs),
    /// Rank predictor candidates by utterance-level SRCC and keep the top Q
    Select(SelectArgs),
    /// Assemble score matrices, train and apply the linear fuser
    #[command(subcommand)]
    Fuse(FuseCommand),
    /// MSE, LCC, SRCC and KTAU at utterance and system level
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory (manifest.csv, features/, truth.json, posteriors.txt)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_systems: usize,
    #[arg(long, default_value_t = 20)]
    pub utterances_per_system: usize,
    #[arg(long, default_value_t = 8)]
    pub n_listeners: usize,
    /// Standard deviation of the per-listener additive bias
    #[arg(long, default_value_t = 0.5)]
    pub listener_bias_std: f64,
    /// Standard deviation of the per-rating noise
    #[arg(long, default_value_t = 0.3)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 80)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Rating manifest (utterance_id,system_id,listener_id,score,audio_path)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for train.csv, val.csv and split.json
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Keep every system entirely in one half
    #[arg(long)]
    pub system_disjoint: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory that relative audio paths resolve against [default: the manifest's directory]
    #[arg(long)]
    pub audio_root: Option<PathBuf>,
    /// Feature cache directory
    #[arg(long)]
    pub out: PathBuf,
    /// Loudness target in dB relative to full scale
    #[arg(long, default_value_t = -26.0, allow_negative_numbers = true)]
    pub target_rms_db: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training manifest
    #[arg(long)]
    pub train: PathBuf,
    /// Validation manifest used for early stopping
    #[arg(long)]
    pub val: PathBuf,
    /// Feature cache directory
    #[arg(long)]
    pub features: PathBuf,
    /// ssl_mos or le_ssl_mos
    #[arg(long, default_value_t = TrainingMode::LeSslMos)]
    pub mode: TrainingMode,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss log (CSV)
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Weight of the mean-score loss
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Weight of the listener loss
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long = "lr", default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Width of the trainable adapter over the frozen features
    #[arg(long, default_value_t = 64)]
    pub adapter_dim: usize,
    /// Listener embedding size
    #[arg(long, default_value_t = 128)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write K-fold out-of-fold predictions for the training manifest
    #[arg(long, value_name = "K", requires = "oof_out")]
    pub oof: Option<usize>,
    /// Destination of the out-of-fold predictions (CSV utterance_id,score)
    #[arg(long, requires = "oof")]
    pub oof_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Predictions (CSV utterance_id,score)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechlmCommand {
    /// Fit the k-means unit quantizer and the n-gram unit LM
    Fit(SpeechlmFitArgs),
    /// Adapt a unit LM to high-MOS domain data
    Finetune(SpeechlmFinetuneArgs),
    /// Average unit log-probability per utterance
    Score(SpeechlmScoreArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SpeechlmFitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Number of k-means units
    #[arg(long, default_value_t = 200)]
    pub clusters: usize,
    /// N-gram order
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Use at most this many frames for k-means (evenly strided)
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Keep runs of repeated units instead of collapsing them
    #[arg(long)]
    pub no_dedup: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub quantizer_out: PathBuf,
    #[arg(long)]
    pub lm_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SpeechlmFinetuneArgs {
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub quantizer: PathBuf,
    /// Domain manifest; only utterances above --min-mos are used
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    pub min_mos: f64,
    /// Weight of the domain model in the adapted mixture
    #[arg(long, default_value_t = 0.5)]
    pub mix: f64,
    #[arg(long)]
    pub no_dedup: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SpeechlmScoreArgs {
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long)]
    pub quantizer: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub no_dedup: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfidenceArgs {
    /// Lines of `<utterance_id> <logprob> <logprob> ...`
    #[arg(long)]
    pub posteriors: PathBuf,
    /// Restrict and order the output to this manifest's utterances
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// Manifest whose mean opinion scores are the selection labels
    #[arg(long)]
    pub manifest: PathBuf,
    /// Candidate predictions as NAME=PATH (repeatable)
    #[arg(long = "candidate", value_name = "NAME=PATH", required = true)]
    pub candidates: Vec<String>,
    /// Number of predictors to keep
    #[arg(long)]
    pub q: usize,
    /// Selection report (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseCommand {
    /// Stack per-subsystem score files into a score matrix
    Assemble(FuseAssembleArgs),
    /// Train the bias-free linear fuser with RMSProp
    Train(FuseTrainArgs),
    /// Apply a trained fuser to a score matrix
    Apply(FuseApplyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FuseAssembleArgs {
    /// Manifest fixing the row order
    #[arg(long)]
    pub manifest: PathBuf,
    /// Column as KIND:NAME=PATH, KIND one of predictor, confidence, speechlm (repeatable)
    #[arg(long = "column", value_name = "KIND:NAME=PATH", required = true)]
    pub columns: Vec<String>,
    /// Score matrix CSV; the schema is written next to it
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseTrainArgs {
    /// Score matrix of the fuser training set
    #[arg(long)]
    pub train_matrix: PathBuf,
    /// Labels for the training matrix
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Score matrix used for early stopping
    #[arg(long)]
    pub val_matrix: PathBuf,
    /// Labels for the validation matrix
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Fuser model file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch MSE log (CSV)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long = "lr", default_value_t = 1e-5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.9)]
    pub rmsprop_decay: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rmsprop_epsilon: f64,
    /// Standardize columns with training-set mean/std
    #[arg(long)]
    pub standardize: bool,
    /// Number of candidate SSL models behind the predictor columns [default: ceil(Q/2)]
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub matrix: PathBuf,
    /// Fused predictions (CSV utterance_id,score)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Predictions (CSV utterance_id,score)
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also write the report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of the table
    #[arg(long)]
    pub json: bool,
}
