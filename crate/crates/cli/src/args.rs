use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ragate", version, about = "Adaptive knowledge augmentation for dialogue systems")]
pub struct Cli {
    /// JSON file of flat `flag_name: value` pairs; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and write it in canonical form with statistics.
    Ingest(IngestArgs),
    /// Build a TF-IDF index over a knowledge collection.
    Index(IndexArgs),
    /// Recall@k of retrieved snippets against gold snippet ids.
    RetrieveEval(RetrieveEvalArgs),
    /// Train the attention gate, or sweep the architecture grid.
    TrainGate(TrainGateArgs),
    /// Run a gate over a corpus and score it against human labels.
    EvalGate(EvalGateArgs),
    /// Export instruction triples for fine-tuning an external gate.
    ExportPeft(ExportPeftArgs),
    /// Validate externally produced gate predictions.
    ImportPreds(ImportPredsArgs),
    /// Generate responses under one or more augmentation policies.
    RunAdaptive(RunAdaptiveArgs),
    /// Merge policy summaries into one comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Canonical,
    Ketod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GateKind {
    Mha,
    Prompt,
    Imported,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "canonical")]
    pub format: Format,
    /// Field mapping for `--format ketod`.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub knowledge: PathBuf,
}

/// Retrieval input: a saved index or precomputed rankings.
#[derive(Debug, Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
    /// Saved index; built from `--knowledge` when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Ranking exchange file; replaces the index.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveEvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Cutoffs to report; repeat for several.
    #[arg(long = "k", required = true)]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct TrainGateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev_corpus: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Snippets attached as gate knowledge.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value = "context_only")]
    pub fusion: String,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub emb: usize,
    /// Feed-forward width; 4 × emb when absent.
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    /// Disable inverse-frequency class weights.
    #[arg(long)]
    pub unweighted: bool,
    /// Keep the threshold at 0.5 instead of tuning it for F1.
    #[arg(long)]
    pub fixed_threshold: bool,
    /// Words seen fewer times map to the unknown id.
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
    /// Train every cell of the architecture grid and keep the best.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct EvalGateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub gate: GateKind,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// `--gate mha`: trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `--gate imported`: prediction file.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// `--gate prompt`: chat endpoint URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    pub model_name: String,
    /// zero_shot or in_context.
    #[arg(long, default_value = "zero_shot")]
    pub prompt: String,
    /// Custom prompt template file.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Include retrieved snippets in the prompt.
    #[arg(long)]
    pub with_knowledge: bool,
    /// Decision used when a completion has no verdict.
    #[arg(long)]
    pub fallback_augment: bool,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct ExportPeftArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated subset of contx, resp, syn_resp, ner, know, source.
    #[arg(long, default_value = "contx")]
    pub features: String,
    /// Per-turn synthetic responses, entities and sources.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// Instruction clause file.
    #[arg(long)]
    pub clauses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportPredsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunAdaptiveArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// no-aug, aug-all, random:N, human or gate; repeat to compare.
    #[arg(long, required = true)]
    pub policy: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Inject only the snippet at this rank instead of the top k.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Gate decisions for `--policy gate`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Name recorded for the gate policy.
    #[arg(long, default_value = "imported")]
    pub gate_name: String,
    /// Generation endpoint URL; the built-in bigram generator when absent.
    #[arg(long)]
    pub generator: Option<String>,
    /// Corpus whose system turns train the built-in generator.
    #[arg(long)]
    pub train_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Policy summary JSON files.
    #[arg(long = "summary", required = true)]
    pub summaries: Vec<PathBuf>,
    /// `NAME=FILE`: a JSON object of per-policy scores added as a column.
    #[arg(long = "column")]
    pub columns: Vec<String>,
}
