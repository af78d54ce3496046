use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundrag::corpus::ChunkMode;
use groundrag::eval::ReportFormat;

use crate::config::{MethodName, Overrides};

#[derive(Debug, Parser)]
#[command(name = "groundrag", version, about = "Grounded retrieval-augmented QA: ingest, index, ask, serve, benchmark")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "GROUNDRAG_CONFIG")]
    pub config: Option<PathBuf>,
    /// Vector index file.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// mock-echo | mock-fixed:TEXT | mock-lookup[:QA_FILE] | remote:MODEL[@ENDPOINT]
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// deterministic:DIM[:SEED] | remote:MODEL[@ENDPOINT]
    #[arg(long, global = true)]
    pub embedder: Option<String>,
    /// Chunks retrieved per question; 0 disables retrieval.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodName>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Questions sampled by `bench`.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// RAIL guardrail spec applied to every answer.
    #[arg(long, global = true)]
    pub rail: Option<PathBuf>,
    /// Address for `serve`.
    #[arg(long, global = true)]
    pub bind: Option<String>,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            index: self.index.clone(),
            model: self.model.clone(),
            embedder: self.embedder.clone(),
            k: self.k,
            method: self.method,
            seed: self.seed,
            n: self.n,
            rail: self.rail.clone(),
            bind: self.bind.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a corpus table and write its chunks as JSON lines.
    Ingest(IngestArgs),
    #[command(subcommand)]
    Index(IndexCommand),
    /// Answer one question.
    Ask {
        #[arg(required = true, num_args = 1..)]
        question: Vec<String>,
    },
    /// Read questions from stdin, one per line, and answer each.
    Chat,
    /// Score answers against a QA set and print the report.
    Bench(BenchArgs),
    #[command(subcommand)]
    Rail(RailCommand),
    /// Write a QA set or corpus as a chat fine-tuning JSONL file.
    ExportFinetune(ExportArgs),
    /// Serve the chat API over HTTP.
    Serve,
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub text_column: Option<String>,
    #[arg(long)]
    pub id_column: Option<String>,
    /// Comma-separated metadata columns.
    #[arg(long, value_delimiter = ',')]
    pub metadata: Vec<String>,
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long, value_enum)]
    pub chunking: Option<ChunkArg>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChunkArg {
    Record,
    Window,
}

impl From<ChunkArg> for ChunkMode {
    fn from(c: ChunkArg) -> Self {
        match c {
            ChunkArg::Record => ChunkMode::Record,
            ChunkArg::Window => ChunkMode::Window,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus table (CSV/TSV); defaults to corpus.path.
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub opts: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Embed a corpus table or chunk file and write the index.
    Build {
        /// Corpus table, or a `.jsonl` chunk file from `ingest`.
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: CorpusArgs,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// QA dataset; defaults to qa.path.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RailCommand {
    /// Parse a RAIL file and summarize it.
    Check { file: PathBuf },
    /// Answer a question with the RAIL file enforced.
    Enforce {
        file: PathBuf,
        #[arg(required = true, num_args = 1..)]
        question: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// QA dataset to export.
    #[arg(long, conflicts_with = "corpus")]
    pub qa: Option<PathBuf>,
    /// Corpus table to export, one question per record.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Question for corpus records; `{doc_id}` and `{<metadata column>}`
    /// are filled in per record.
    #[arg(long, requires = "corpus")]
    pub question_template: Option<String>,
    /// System message; defaults to the shipped instruction text.
    #[arg(long)]
    pub system_prompt: Option<PathBuf>,
    #[command(flatten)]
    pub opts: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
}
