//! Flag definitions for the `cnnlstm` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cnnlstm", version, about = "CNN-LSTM sentence representation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a model on a corpus and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Write one feature row per input sentence.
    Encode(EncodeArgs),
    /// Rank pool sentences by cosine similarity to a query.
    Nn(NnArgs),
    /// Decode encode(A) - encode(B) + encode(C).
    Arith(ArithArgs),
    /// Logistic regression on frozen sentence features.
    EvalCls(EvalClsArgs),
    /// Relatedness regression on sentence-pair features.
    EvalPair(EvalPairArgs),
    /// Train caption/item projections with the ranking hinge and report recall.
    EvalRank(EvalRankArgs),
}

/// Settings shared by every command. Keys in the config file use the flag
/// names with `-` replaced by `_`; flags override the file.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// `key=value` file supplying defaults for any setting.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved settings in canonical form and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Seed for shuffling, dropout, splits and initialization.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    /// autoencoder, future_predictor, composite or hierarchical.
    #[arg(long)]
    pub variant: Option<String>,
    /// Largest vocabulary, reserved tokens included.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Word vector width k.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Comma-separated convolution window sizes.
    #[arg(long)]
    pub windows: Option<String>,
    /// Filters per window size d.
    #[arg(long)]
    pub maps_per_window: Option<usize>,
    /// Sentence decoder width.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Paragraph LSTM width.
    #[arg(long)]
    pub paragraph_hidden: Option<usize>,
    /// learned, or fixed to the vectors given by --embeddings.
    #[arg(long)]
    pub embedding_mode: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Global gradient-norm threshold.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Sentence pairs, or paragraphs for the hierarchical model, per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Paragraph chunk length for the hierarchical model.
    #[arg(long)]
    pub sentences_per_paragraph: Option<usize>,
    /// Dropout rate on sentence codes.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Half-width of the uniform initialization.
    #[arg(long)]
    pub init_range: Option<f64>,
    /// Initial LSTM forget-gate bias.
    #[arg(long)]
    pub forget_bias: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    /// Adam denominator offset.
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Number of optimizer steps.
    #[arg(long, visible_alias = "steps")]
    pub max_steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Training text: one sentence per line, blank lines between paragraphs.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, visible_alias = "out")]
    pub checkpoint: Option<PathBuf>,
    /// Metrics log (`step<TAB>loss<TAB>grad_norm`); defaults to CHECKPOINT.metrics.tsv.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Pretrained word vectors copied into the embedding table before training.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EvalFlags {
    /// Worker threads for encoding and scoring.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Trained model to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// One sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Feature dump; a `.tsv` or `.txt` name writes text, anything else the binary container.
    #[arg(long)]
    pub output: PathBuf,
    /// External word vectors used to embed words missing from the vocabulary.
    #[arg(long, value_name = "FILE")]
    pub expand: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NnArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Trained model to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Query sentence.
    #[arg(long)]
    pub query: String,
    /// Candidate sentences, one per line.
    #[arg(long)]
    pub pool: PathBuf,
    /// Neighbours to report.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ArithArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained model to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// First sentence.
    #[arg(long)]
    pub a: String,
    /// Sentence whose code is subtracted.
    #[arg(long)]
    pub b: String,
    /// Sentence whose code is added.
    #[arg(long)]
    pub c: String,
    /// Longest decoded sentence.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct ClassifierFlags {
    /// Held-out share of the examples.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// L2 penalty of the classifier.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Full-batch gradient steps.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalClsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[command(flatten)]
    pub cls: ClassifierFlags,
    /// Trained model to load; needed with --data.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `label<TAB>sentence` lines with integer labels.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub data: Option<PathBuf>,
    /// Precomputed feature dump (text or container).
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalPairArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[command(flatten)]
    pub cls: ClassifierFlags,
    /// Trained model to load.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `score<TAB>sentence a<TAB>sentence b` lines, scores in [1, 5].
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalRankArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Caption vectors as a text feature dump; row i pairs with item row i.
    #[arg(long, requires = "items", required_unless_present = "synthetic")]
    pub captions: Option<PathBuf>,
    /// Item vectors as a text feature dump.
    #[arg(long, requires = "captions")]
    pub items: Option<PathBuf>,
    /// Generate this many aligned synthetic pairs instead of reading files.
    #[arg(long, conflicts_with = "captions")]
    pub synthetic: Option<usize>,
    /// Held-out pool size; the last POOL pairs are ranked, the rest train.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Width of the shared space.
    #[arg(long)]
    pub shared_dim: Option<usize>,
}
