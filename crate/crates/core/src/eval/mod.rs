//! Answer-quality metrics and the benchmark runner.
//!
//! - [`bertscore`]: greedy token matching over token embeddings. Recall
//!   averages, over reference tokens, the best cosine against any candidate
//!   token; precision does the same from the candidate side.
//! - [`embedding_distance`]: `1 - cos` between whole-text embeddings.
//! - [`run_benchmark`]: samples questions, answers them through a
//!   [`Pipeline`](crate::pipeline::Pipeline), scores each answer against
//!   the reference, and aggregates into an [`EvalReport`].

mod benchmark;
mod metrics;
mod report;
mod tokens;

use thiserror::Error;

use crate::embedding::EmbeddingError;

pub use benchmark::{dataset_checksum, run_benchmark, sample_questions, BenchOptions, Scorer};
pub use metrics::{
    bertscore, embedding_distance, harmonic_f1, idf_weights, BertScore, IdfTable, TokenEmbeddingSequence,
};
pub use report::{BenchManifest, EvalReport, EvalRow, EvalScores, ReportFormat, SkippedRow};
pub use tokens::{token_embed, RemoteTokenEmbedder, TokenEmbedder, TokenEmbedderConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("{tokens} tokens but {vectors} vectors")]
    LengthMismatch { tokens: usize, vectors: usize },
    #[error("token vectors have mixed dimensions ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("token '{0}' has a zero-norm vector")]
    ZeroNorm(String),
    #[error("no idf weight for token '{0}'")]
    MissingIdf(String),
    #[error("text to score is empty")]
    EmptyText,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("QA set is empty")]
    EmptyDataset,
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("cannot sample {requested} questions from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("few-shot exemplar '{0}' is in the evaluation sample")]
    ExemplarLeak(String),
    #[error("every sampled question was skipped ({0} skipped)")]
    AllSkipped(usize),
    #[error("token provider error: {0}")]
    Provider(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
