use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serlab::losses::DEFAULT_FOCAL_GAMMA;
use serlab::model::{Activation, FusionKind, Modality, Task};
use serlab::trainer::{
    LossKind, SamplerKind, DEFAULT_BATCH_SIZE, STAGE1_EPOCHS, STAGE1_LEARNING_RATE, STAGE2_EPOCHS,
    STAGE2_LEARNING_RATE,
};
use serlab::dataio::Split;
use serlab::llmproto::DEFAULT_PARALLELISM;
use serlab::metrics::TableShape;
use serlab::taxonomy::Attribute;

#[derive(Debug, Parser)]
#[command(name = "serlab", version, about = "Two-stage speech+text emotion recognition on embedding files")]
pub struct Cli {
    /// `key = value` file; each key is a long flag of the subcommand. Flags
    /// given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset (speech.femb, text.femb, labels.csv).
    GenSynth(GenSynthArgs),
    /// Train one modality encoder with a task head.
    TrainStage1(Stage1Args),
    /// Train a fusion head over two frozen stage-1 encoders.
    TrainStage2(Stage2Args),
    /// Run a checkpoint over one split and write a predictions CSV.
    Predict(PredictArgs),
    /// Score a predictions CSV against labels as a table-shaped row.
    Evaluate(EvaluateArgs),
    /// Post-hoc analyses of attribute predictions.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Zero-shot LLM prompting, replies and scoring.
    #[command(subcommand)]
    Llm(LlmCommand),
    /// Run an experiment grid and write one CSV row per setting.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest and check its outputs match.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utterances per class in A,C,D,F,H,N,S,U order.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize; 8])]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub speech_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub text_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 12)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 3)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 8)]
    pub max_tokens: usize,
    /// Norm of each class centre.
    #[arg(long, default_value_t = 1.5)]
    pub separation: f64,
    /// Feature and attribute noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub dev_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCommon {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, log, report and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Required; drives initialisation and batch order.
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    /// categorical | attributes
    #[arg(long, default_value_t = Task::Categorical)]
    pub task: Task,
    /// ce | wce | focal | ccc_loss | mse. Default: wce for categorical,
    /// ccc_loss for attributes.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long, default_value_t = DEFAULT_FOCAL_GAMMA)]
    pub focal_gamma: f64,
    /// shuffled | balanced
    #[arg(long, default_value_t = SamplerKind::Shuffled)]
    pub sampler: SamplerKind,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// Head activation: mish | relu
    #[arg(long, default_value_t = Activation::Mish)]
    pub activation: Activation,
}

#[derive(Debug, Args, Serialize)]
pub struct Stage1Args {
    #[command(flatten)]
    pub common: TrainCommon,
    /// speech | text
    #[arg(long)]
    pub modality: Modality,
    #[arg(long = "lr", default_value_t = STAGE1_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = STAGE1_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Attention width of the speech pooling layer.
    #[arg(long, default_value_t = 8)]
    pub attn_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct Stage2Args {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Stage-1 speech checkpoint.
    #[arg(long)]
    pub speech: PathBuf,
    /// Stage-1 text checkpoint.
    #[arg(long)]
    pub text: PathBuf,
    /// concat | cross-attn
    #[arg(long, default_value_t = FusionKind::Concat)]
    pub fusion: FusionKind,
    #[arg(long = "lr", default_value_t = STAGE2_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = STAGE2_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub xattn_dim: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// train | dev | test1
    #[arg(long, default_value_t = Split::Test1)]
    pub split: Split,
    /// Keep attribute outputs outside [1,7] as they are.
    #[arg(long)]
    pub no_clamp: bool,
    /// Predictions CSV; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Labels CSV (a dataset's labels.csv).
    #[arg(long)]
    pub labels: PathBuf,
    /// Labelled rows to score; default is the split shared by all predictions.
    #[arg(long)]
    pub split: Option<Split>,
    /// Column layout: table1 | table2 | table3
    #[arg(long, default_value_t = TableShape::Table1)]
    pub shape: TableShape,
    /// Row label written in the first CSV column.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Directory for report.csv, report.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeArg {
    Arousal,
    Valence,
    Dominance,
}

impl AttributeArg {
    pub fn attribute(self) -> Attribute {
        match self {
            AttributeArg::Arousal => Attribute::Arousal,
            AttributeArg::Valence => Attribute::Valence,
            AttributeArg::Dominance => Attribute::Dominance,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// CCC within ground-truth ranges of one attribute.
    Bins(BinsArgs),
    /// Mean ± std of predicted (and true) attribute values.
    Stats(StatsArgs),
    /// Per-emotion shares of samples where model A's squared error beats B's.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BinsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = AttributeArg::Valence)]
    pub attribute: AttributeArg,
    /// Bin edges; the last bin includes its upper edge.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 3.0, 5.0, 7.0])]
    pub edges: Vec<f64>,
    #[arg(long)]
    pub split: Option<Split>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Also report ground-truth statistics over the same ids.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub pred_a: PathBuf,
    #[arg(long)]
    pub pred_b: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = AttributeArg::Valence)]
    pub attribute: AttributeArg,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LlmCommand {
    /// Print the prompt for one transcript.
    Prompt(PromptArgs),
    /// Prompt an endpoint for every transcript and write predictions.
    Run(LlmRunArgs),
    /// Score an `llm run` directory against labels, disclosing failures.
    Score(LlmScoreArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PromptArgs {
    /// categorical | attributes
    #[arg(long, default_value_t = Task::Categorical)]
    pub task: Task,
    #[arg(long)]
    pub transcript: String,
}

#[derive(Debug, Args, Serialize)]
pub struct LlmRunArgs {
    /// categorical | attributes
    #[arg(long, default_value_t = Task::Categorical)]
    pub task: Task,
    /// CSV with header `id,transcript`.
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Split written into the predictions CSV.
    #[arg(long, default_value_t = Split::Test1)]
    pub split: Split,
    /// OpenAI-compatible base URL; `/chat/completions` is appended.
    #[arg(long, default_value = "http://localhost:8000/v1")]
    pub base_url: String,
    #[arg(long, default_value = "llama-3.2-3b-instruct")]
    pub model: String,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 2)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 500)]
    pub retry_backoff_ms: u64,
    /// JSONL reply cache; hits skip the network.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
    pub parallelism: usize,
    /// Output directory for predictions.csv, llm_run.json and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LlmScoreArgs {
    /// Directory written by `llm run`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Column layout: table1 | table2 | table3
    #[arg(long, default_value_t = TableShape::Table3)]
    pub shape: TableShape,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Speech-only baseline, cross-attention, concat, concat with Mish.
    Table1,
    /// WCE, balanced sampling and focal loss on the speech encoder.
    Table2,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub grid: Grid,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Required; drives initialisation and batch order.
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    /// Runs executed at once; each run is deterministic on its own.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = STAGE1_LEARNING_RATE)]
    pub stage1_lr: f64,
    #[arg(long, default_value_t = STAGE1_EPOCHS)]
    pub stage1_epochs: usize,
    #[arg(long, default_value_t = STAGE2_LEARNING_RATE)]
    pub stage2_lr: f64,
    #[arg(long, default_value_t = STAGE2_EPOCHS)]
    pub stage2_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_FOCAL_GAMMA)]
    pub focal_gamma: f64,
    /// Split the report rows are scored on.
    #[arg(long, default_value_t = Split::Dev)]
    pub split: Split,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
