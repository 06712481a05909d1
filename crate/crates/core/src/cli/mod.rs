//! The `rolefuse` command-line driver.
//!
//! Every subcommand takes its options as flags and, optionally, from a JSON
//! file given with `--config` whose keys are the long flag names. Flags win
//! over file values; unknown keys are an error. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 numeric failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::Error;

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Parser)]
#[command(name = "rolefuse", version, about = "Entity role labeling for memes")]
struct Cli {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Convert a dataset to BIO-tagged CoNLL.
    Convert(ConvertArgs),
    /// Train a linear-chain CRF tagger.
    TrainCrf(TrainCrfArgs),
    /// Tag sequences with a trained CRF.
    Tag(TagArgs),
    /// Train a BLOCK fusion classifier over embedding tables.
    TrainFusion(TrainFusionArgs),
    /// Predict entity roles with a trained fusion model.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Write a class-balanced, augmented instance file.
    Augment(AugmentArgs),
    /// Print the role distribution of a dataset.
    Distribution(DistributionArgs),
    /// Majority-class or image-only linear SVM baseline predictions.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConvertArgs {
    /// JSON config file with defaults for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// all_tokens or entities_only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainCrfArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// CoNLL file, or dataset JSONL converted with --mode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// File of known entity names, one per line, for the name-list feature.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub names: Option<PathBuf>,
    /// Number of pre-annotation columns to use as features.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TagArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// CoNLL file, or dataset JSONL converted with --mode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// CoNLL output with predicted tags.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainFusionArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL or instance JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// EMB1 table keyed by entity name.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_emb: Option<PathBuf>,
    /// EMB1 table keyed by meme id (or augmented id).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_emb: Option<PathBuf>,
    /// EMB1 table keyed by meme id.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_emb: Option<PathBuf>,
    /// Where to write the model; metadata goes to `<model>.json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// entity+text, entity+image or entity+text_image.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub attention: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_slots: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_dim: Option<usize>,
    /// none, lexicon, contextual or mix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<String>,
    /// Synonym lexicon TSV; the bundled lexicon is used when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Shell command starting a substitution provider.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    /// Extra copies per role as hero,villain,victim,other.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copies: Option<String>,
    /// Per-token substitution probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_text_length: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    /// Signed square root and L2 normalization of each block output.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub normalize: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_entity: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_context: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_out: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Dataset JSONL or instance JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// EMB1 table keyed by entity name.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_emb: Option<PathBuf>,
    /// EMB1 table keyed by meme id (or augmented id).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_emb: Option<PathBuf>,
    /// EMB1 table keyed by meme id.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_emb: Option<PathBuf>,
    /// Prediction JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Gold dataset or instance JSONL; gold CoNLL for --format sequence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    /// Prediction JSONL; predicted CoNLL for --format sequence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    /// classification or sequence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Row label for the text table.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Where to write the JSON report.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AugmentArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL or instance JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Instance JSONL with originals and copies.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// none, lexicon, contextual or mix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<String>,
    /// Synonym lexicon TSV; the bundled lexicon is used when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Shell command starting a substitution provider.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    /// Extra copies per role as hero,villain,victim,other.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copies: Option<String>,
    /// Per-token substitution probability.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DistributionArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL or instance JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BaselineArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// majority or svm.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Image feature table for the SVM, keyed by meme id.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_emb: Option<PathBuf>,
    /// SVM regularization constant C.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Prediction JSONL.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Result of a subcommand: a human-readable summary and its JSON form.
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
}

fn run(cli: Cli) -> crate::Result<Outcome> {
    match cli.command {
        Command::Convert(a) => commands::convert(a),
        Command::TrainCrf(a) => commands::train_crf(a),
        Command::Tag(a) => commands::tag(a),
        Command::TrainFusion(a) => commands::train_fusion(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Augment(a) => commands::augment(a),
        Command::Distribution(a) => commands::distribution(a),
        Command::Baseline(a) => commands::baseline(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on standard error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("JSON output"));
            } else if !out.text.is_empty() {
                print!("{}", out.text);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn required<T>(value: Option<T>, flag: &str) -> crate::Result<T> {
    value.ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}
