//! The `idte` command line.
//!
//! Every subcommand takes an optional JSON `--config` file; flags given on
//! the command line override values from the file. Results go to the files
//! named by flags, and a JSON summary (or a table with `--pretty`) goes to
//! stdout.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "idte",
    version,
    about = "Multimodal drug-trafficking post detection lab"
)]
pub struct Cli {
    /// Print human-readable tables instead of JSON summaries.
    #[arg(long, global = true)]
    pub pretty: bool,

    /// Seed overriding every seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus as JSONL.
    GenCorpus(GenCorpusArgs),
    /// Generate a synthetic social platform with planted dealers.
    GenPlatform(GenPlatformArgs),
    /// Train a model on a labeled corpus.
    Train(TrainArgs),
    /// Evaluate a trained model on a labeled corpus.
    Eval(EvalArgs),
    /// Run the hashtag crawl against a generated platform.
    CrawlSim(CrawlArgs),
    /// Build the hashtag co-occurrence graph, communities and statistics.
    Graph(GraphArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output corpus JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional cue statistics JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// text_only, image_only or joint_and.
    #[arg(long, value_parser = parse_named::<idte_core::synthdata::DependenceMode>)]
    pub mode: Option<idte_core::synthdata::DependenceMode>,
    #[arg(long)]
    pub obfuscation_rate: Option<f64>,
    #[arg(long)]
    pub distractor_rate: Option<f64>,
    #[arg(long)]
    pub comment_rate: Option<f64>,
    #[arg(long)]
    pub d_img: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenPlatformArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output platform JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub dealers: Option<usize>,
    #[arg(long)]
    pub posts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with optional "model" and "train" objects.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled corpus JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional training history JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// mmbt, text_only, image_only, concat or fbc.
    #[arg(long, value_parser = parse_named::<idte_core::model::ModelKind>)]
    pub kind: Option<idte_core::model::ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Skip obfuscation normalization.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub image_tokens: Option<usize>,
    #[arg(long)]
    pub max_seq: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output metrics report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Evaluate only the held-out part of the split made with this seed.
    #[arg(long)]
    pub holdout_seed: Option<u64>,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// JSON with optional "crawl", "tpr", "fpr", "seeds" and "num_seeds".
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Platform JSON from gen-platform.
    #[arg(long)]
    pub platform: PathBuf,
    /// Output JSONL of collected records.
    #[arg(long)]
    pub out: PathBuf,
    /// Output summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Comma-separated seed hashtags.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<String>,
    /// Without --seeds, use this many of the platform's most popular drug
    /// hashtags.
    #[arg(long)]
    pub num_seeds: Option<usize>,
    #[arg(long)]
    pub tpr: Option<f64>,
    #[arg(long)]
    pub fpr: Option<f64>,
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub posts_per_hashtag: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Records JSONL; hashtags of posts are used.
    #[arg(long)]
    pub data: PathBuf,
    /// Output graph JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Store directory, created when missing.
    #[arg(long)]
    pub store: PathBuf,
    /// Records JSONL whose posts are added to the store before serving.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

/// Parses a snake_case enum name through its serde representation.
fn parse_named<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub(crate) fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub(crate) fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{}: no such file", path.display());
    }
    Ok(())
}

pub(crate) fn require_dir(path: &Path) -> Result<()> {
    if path.exists() && !path.is_dir() {
        bail!("{}: not a directory", path.display());
    }
    Ok(())
}

/// Checks that an output file can be created: its parent directory exists
/// and the path is not a directory.
pub(crate) fn require_writable(path: &Path) -> Result<()> {
    if path.is_dir() {
        bail!("{}: is a directory", path.display());
    }
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!(
            "{}: parent directory {} does not exist",
            path.display(),
            parent.display()
        );
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Output of a subcommand: a JSON summary plus a table rendering.
pub(crate) struct Outcome {
    pub json: serde_json::Value,
    pub table: String,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(outcome) => {
            let text = if cli.pretty {
                outcome.table
            } else {
                outcome.json.to_string()
            };
            let _ = writeln!(out, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct TrainFile {
    pub model: idte_core::model::ModelConfig,
    pub train: idte_core::model::TrainConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct CrawlFile {
    pub crawl: idte_core::crawler::CrawlConfig,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub seeds: Vec<String>,
    pub num_seeds: Option<usize>,
    pub gate_seed: Option<u64>,
}
