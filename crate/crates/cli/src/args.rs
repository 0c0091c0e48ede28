use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "ssr", version, about = "Event-relation corpora, models and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Relation statistics of a corpus.
    Analyze(AnalyzeArgs),
    /// Train a classifier or a sequence decoder.
    Train(TrainArgs),
    /// Score a model or a baseline on a corpus.
    Eval(EvalArgs),
    /// Turn commonsense records into a training corpus.
    Reformulate(ReformulateArgs),
    /// Generate a corpus with planted relation rules.
    Synth(SynthArgs),
    /// Dump model input tokens.
    Serialize(SerializeArgs),
    /// Train once per learning rate and compare.
    Sweep(SweepArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stat {
    Histogram,
    PairDominant,
    Distance,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pair,
    Full,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpMode {
    Pair,
    Full,
    Context,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Classifier,
    Seq2seq,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Majority,
    Memorization,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMode {
    Keep3,
    Map4,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Markers {
    Single,
    Double,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingArg {
    Mean,
    First,
    Events,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Stat::All)]
    pub stat: Stat,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one CSV per statistic into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

/// Model size and optimization settings; unset values keep the library defaults.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, value_enum)]
    pub markers: Option<Markers>,
    /// Stop once validation macro accuracy reaches this value.
    #[arg(long)]
    pub stop_at: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub aux: Switch,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub balanced_loss: Switch,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub undersample: Switch,
    #[arg(long, value_enum, default_value_t = Arch::Classifier)]
    pub arch: Arch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub model_out: PathBuf,
    /// Knowledge-base corpus for pretraining before fine-tuning.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub pretrain_epochs: usize,
    /// Per-epoch training log as JSON.
    #[arg(long)]
    #[serde(skip)]
    pub log_out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, requires = "train")]
    pub baseline: Option<Baseline>,
    /// Training corpus the baseline is fit on.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReformulateArgs {
    #[arg(long)]
    pub kb: PathBuf,
    /// Sequences per record.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MapMode::Keep3)]
    pub map: MapMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator settings as JSON; omitted fields take defaults.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed of the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write train.jsonl, val.jsonl and test.jsonl here.
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SerializeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = DumpMode::Full)]
    pub mode: DumpMode,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub aux: Switch,
    #[arg(long, value_enum, default_value_t = Markers::Single)]
    pub markers: Markers,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Corpus the runs are compared on; defaults to the validation corpus.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lrs: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub aux: Switch,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub balanced_loss: Switch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON with the comparison table and per-epoch logs.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Per-epoch collapse diagnostic as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}
