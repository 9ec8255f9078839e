//! `astrolm` command-line front end.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "astrolm",
    version,
    about = "Desk-scale language-model toolkit: tokenizer, MLM/NSP pretraining, NER and citation-pair embeddings",
    arg_required_else_help = true
)]
struct Cli {
    /// JSON settings file with optional sections: tokenizer, model,
    /// pretrain, finetune, sts, mining. Flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run manifest path [default: <out>.manifest.json]
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a WordPiece vocabulary from a corpus.
    TokenizerTrain(TokenizerTrainArgs),
    /// Encode a text with a vocabulary and print the encoding as JSON.
    Tokenize(TokenizeArgs),
    /// Pretrain an encoder with MLM and NSP.
    Pretrain(PretrainArgs),
    /// Finetune a pretrained checkpoint for IOB2 entity tagging.
    FinetuneNer(FinetuneNerArgs),
    /// Score predicted labels against gold labels.
    EvalNer(EvalNerArgs),
    /// Label a CoNLL file with random draws from training label frequencies.
    BaselineNer(BaselineNerArgs),
    /// Extract (citation context, cited abstract) pairs from a corpus.
    MinePairs(MinePairsArgs),
    /// Train a bi-encoder on citation pairs.
    TrainSts(TrainStsArgs),
    /// Print the embedding of a text as a JSON array.
    Embed(EmbedArgs),
    /// Compare metrics files: per-label CSV and a metrics table.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct TokenizerTrainArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Minimum pair frequency for a merge.
    #[arg(long)]
    pub min_freq: Option<u64>,
    /// Lowercase text before tokenizing.
    #[arg(long)]
    pub lowercase: bool,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Truncate and pad to this length [default: no truncation or padding].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds both initialization and the data stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Checkpoint JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV [default: <out>.log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct FinetuneNerArgs {
    /// Pretrained checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Training data in CoNLL format.
    #[arg(long)]
    pub train: PathBuf,
    /// Vocabulary file [default: the one stored in the checkpoint].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Entity type list, one per line [default: the built-in 32 types].
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Tagger JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalNerArgs {
    /// Gold labels in CoNLL format.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted labels in CoNLL format, aligned with the gold file.
    #[arg(long, conflicts_with = "tagger", required_unless_present = "tagger")]
    pub pred: Option<PathBuf>,
    /// Tagger to run on the gold tokens.
    #[arg(long)]
    pub tagger: Option<PathBuf>,
    /// Entity type list [default: the tagger's, else the built-in 32 types].
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Model name recorded in the metrics file [default: file stem of --pred or --tagger].
    #[arg(long)]
    pub model: Option<String>,
    /// Split name recorded in the metrics file.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-type bubble CSV here.
    #[arg(long)]
    pub bubble: Option<PathBuf>,
}

#[derive(Args)]
pub struct BaselineNerArgs {
    /// CoNLL data whose label frequencies define the distribution.
    #[arg(long)]
    pub train: PathBuf,
    /// CoNLL data to label; its labels are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Predictions in CoNLL format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MinePairsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Query context: containing, prefix or previous.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub min_chars: Option<usize>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    /// Use the cited title when the abstract is missing.
    #[arg(long)]
    pub title_fallback: bool,
    /// Pair JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Also split by citing document, as TRAIN,VALIDATION,TEST fractions,
    /// into <out>.{train,validation,test}.jsonl.
    #[arg(long, value_name = "RATIOS")]
    pub split: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args)]
pub struct TrainStsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Held-out pairs; retrieval metrics go to <out>.eval.json.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Embedding model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Two or more metrics files; deltas are taken against the first.
    #[arg(long, num_args = 2.., required = true)]
    pub metrics: Vec<PathBuf>,
    /// Per-label CSV: model,type,precision,recall,support,section_affinity.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the metrics table as CSV here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    ExitCode::from(2)
                }
                _ => {
                    let rendered = e.to_string();
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    eprintln!("astrolm: {}", first.trim_start_matches("error: "));
                    ExitCode::from(2)
                }
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("astrolm: {message}");
            ExitCode::FAILURE
        }
    }
}
