//! Building blocks for domain-grounded retrieval-augmented dialog systems.
//!
//! The crate covers the whole loop: loading a curated corpus and QA set
//! ([`corpus`]), embedding and cosine search ([`embedding`], [`store`]),
//! rendering zero-shot / few-shot / instruction prompts ([`prompting`]),
//! talking to chat models ([`generation`]), the retrieve-then-generate
//! pipeline ([`pipeline`]), RAIL guardrails ([`guardrails`]) and the
//! benchmark metrics ([`eval`]).
//!
//! Everything runs offline with the deterministic hash embedder and the mock
//! chat models; remote providers speak the OpenAI-compatible HTTP contract.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod generation;
pub mod guardrails;
mod http;
pub mod parallel;
pub mod pipeline;
pub mod prompting;
pub mod sampling;
pub mod store;

pub use corpus::{Chunk, ChunkMode, ChunkingConfig, ColumnMapping, QaPair, SourceDocument};
pub use embedding::{cosine_similarity, EmbeddingProviderConfig, EmbeddingVector, Embedder};
pub use eval::{bertscore, BertScore, EvalReport, EvalScores, TokenEmbeddingSequence};
pub use generation::{ChatModel, Completion, ModelConfig};
pub use guardrails::{parse_rail, RailSpec, ValidatorRegistry};
pub use pipeline::{Answer, Pipeline, PipelineConfig};
pub use prompting::{PromptMethod, RenderedPrompt};
pub use store::{IndexEntry, SearchHit, VectorIndex};

pub use http::RetryPolicy;
