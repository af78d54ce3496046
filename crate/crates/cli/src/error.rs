use std::fmt;

use groundrag::corpus::CorpusError;
use groundrag::embedding::EmbeddingError;
use groundrag::eval::EvalError;
use groundrag::generation::GenerationError;
use groundrag::guardrails::{GuardrailError, RailError};
use groundrag::pipeline::PipelineError;
use groundrag::prompting::PromptError;
use groundrag::store::StoreError;

/// A failure reported as `error[category]: message`.
///
/// Categories are stable identifiers shared by the CLI and the HTTP API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, whatever the source message held
        let message = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {}", self.category, message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

macro_rules! category {
    ($($ty:ty => $cat:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($cat, e.to_string())
            }
        })*
    };
}

category! {
    CorpusError => "corpus",
    StoreError => "store",
    PromptError => "prompt",
    RailError => "rail",
    toml::de::Error => "config",
}

fn unavailable_or(category: &'static str, unavailable: bool, message: String) -> CliError {
    CliError::new(if unavailable { "unavailable" } else { category }, message)
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        let unavailable = match &e {
            EmbeddingError::Transport { .. } => true,
            EmbeddingError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        };
        unavailable_or("embedding", unavailable, e.to_string())
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        unavailable_or("generation", e.is_unavailable(), e.to_string())
    }
}

impl From<GuardrailError> for CliError {
    fn from(e: GuardrailError) -> Self {
        match e {
            GuardrailError::Generation(g) => g.into(),
            other => CliError::new("guardrail", other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let unavailable = e.is_unavailable();
        let category = match &e {
            PipelineError::EmptyQuestion => "bad_request",
            PipelineError::DimensionMismatch { .. } | PipelineError::Store(_) => "store",
            PipelineError::Prompt(_) => "prompt",
            PipelineError::Embedding(_) => "embedding",
            PipelineError::Generation(_) => "generation",
            PipelineError::Guardrail(_) | PipelineError::GuardrailRejected { .. } => "guardrail",
        };
        unavailable_or(category, unavailable, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Embedding(inner) => inner.into(),
            other => CliError::new("eval", other.to_string()),
        }
    }
}
