//! `hopground` command-line entry points.
//!
//! Exit codes: 0 run completed (per-item failures are reported, not fatal),
//! 1 configuration or I/O error, 2 malformed dataset or data file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hopground::distill::DistillError;
use hopground::eval::{DatasetError, DatasetFormat};
use hopground::pipeline::RetrieverKind;
use hopground::retrieval::RetrievalError;

#[derive(Parser)]
#[command(name = "hopground", version, about = "Generate-then-ground multi-hop question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index cache from a JSONL corpus.
    Index(IndexArgs),
    /// Answer every question of a dataset; writes trajectories.jsonl and manifest.json.
    Run(RunArgs),
    /// Score trajectories against a dataset (Acc, F1, optionally the LLM judge).
    Eval(EvalArgs),
    /// Synthesize a grounding-distillation corpus.
    Synth(SynthArgs),
    /// Statistics of a synthesized corpus.
    Stats(StatsArgs),
}

#[derive(Args)]
pub struct IndexArgs {
    /// JSONL corpus, one `{id, title, body}` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "generic")]
    pub format: DatasetFormat,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_hops: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = parse_retriever)]
    pub retriever: Option<RetrieverKind>,
    /// JSONL corpus for the BM25 retriever.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Index cache for the BM25 retriever (see `index`).
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub retriever_url: Option<String>,
    /// Replay a scripted LLM from a JSON file instead of calling a service.
    #[arg(long)]
    pub llm_script: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Directory of prompt templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub strict_citation: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "generic")]
    pub format: DatasetFormat,
    /// Also score with the LLM judge.
    #[arg(long)]
    pub judge: bool,
    /// Scripted judge replies (JSON array) instead of a live model.
    #[arg(long)]
    pub judge_script: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Where eval.csv and summary.json go; defaults to the trajectories' directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSONL of `{id, question, answer, gold_doc, noise_docs}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write dropped examples, each with its verdict.
    #[arg(long)]
    pub include_dropped: bool,
    #[arg(long, default_value_t = 9)]
    pub noise_docs: usize,
    #[arg(long)]
    pub student_script: Option<PathBuf>,
    #[arg(long)]
    pub teacher_script: Option<PathBuf>,
    #[arg(long)]
    pub student_model: Option<String>,
    #[arg(long)]
    pub teacher_model: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_retriever(s: &str) -> Result<RetrieverKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "bm25" => Ok(RetrieverKind::Bm25),
        "external" => Ok(RetrieverKind::External),
        other => Err(format!("unknown retriever `{other}` (expected bm25 or external)")),
    }
}

/// Data that could be read but not understood.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Malformed(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    let malformed = err.chain().any(|e| {
        e.is::<Malformed>()
            || matches!(e.downcast_ref::<DatasetError>(), Some(DatasetError::Malformed { .. }))
            || matches!(e.downcast_ref::<DistillError>(), Some(DistillError::InputLine { .. }))
            || matches!(
                e.downcast_ref::<RetrievalError>(),
                Some(
                    RetrievalError::CorpusLine { .. }
                        | RetrievalError::DuplicateDocId(_)
                        | RetrievalError::EmptyCorpus
                        | RetrievalError::InvalidDocument(_)
                )
            )
    });
    if malformed {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => commands::index(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Stats(a) => commands::stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
