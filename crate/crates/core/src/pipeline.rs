//! Retrieve-then-generate: embed the question once, take the top-k chunks,
//! render them into the prompt in rank order, generate (through guardrails
//! when configured), and return the answer with its citations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, EmbeddingError, EmbeddingProviderConfig};
use crate::generation::{ChatModel, GenerationError, ModelConfig};
use crate::guardrails::{enforce, GuardrailError, GuardrailEvent, OnFailAction, RailSpec, ValidatorRegistry, DEFAULT_MAX_ATTEMPTS};
use crate::prompting::{render_with, ContextPassage, PromptError, PromptMethod, PromptTemplates, RenderedPrompt};
use crate::store::{StoreError, VectorIndex};

pub const DEFAULT_RETRIEVAL_K: usize = 5;
/// Characters of retrieved text allowed into one prompt.
pub const DEFAULT_CONTEXT_BUDGET: usize = 8000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("index holds {index}-dim vectors but the embedder produces {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Guardrail(GuardrailError),
    #[error("guardrail rejected the answer after {attempts} attempt(s): {validator} (on-fail {action})")]
    GuardrailRejected {
        attempts: usize,
        validator: String,
        action: OnFailAction,
        last_text: String,
        events: Vec<GuardrailEvent>,
    },
}

impl PipelineError {
    /// The embedder or model could not be reached.
    pub fn is_unavailable(&self) -> bool {
        match self {
            PipelineError::Embedding(EmbeddingError::Transport { .. }) => true,
            PipelineError::Embedding(EmbeddingError::Provider { status, .. }) => *status == 429 || *status >= 500,
            PipelineError::Generation(e) | PipelineError::Guardrail(GuardrailError::Generation(e)) => e.is_unavailable(),
            _ => false,
        }
    }
}

impl From<GuardrailError> for PipelineError {
    fn from(e: GuardrailError) -> Self {
        match e {
            GuardrailError::Terminal {
                attempts,
                validator,
                action,
                last_text,
                events,
            } => PipelineError::GuardrailRejected {
                attempts,
                validator,
                action,
                last_text,
                events,
            },
            other => PipelineError::Guardrail(other),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardrailSetup {
    pub spec: RailSpec,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}
fn default_k() -> usize {
    DEFAULT_RETRIEVAL_K
}
fn default_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: PromptMethod,
    pub model: ModelConfig,
    pub embedder: EmbeddingProviderConfig,
    /// 0 disables retrieval.
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_budget")]
    pub context_char_budget: usize,
    #[serde(default)]
    pub guardrail: Option<GuardrailSetup>,
}

impl PipelineConfig {
    pub fn new(method: PromptMethod, model: ModelConfig, embedder: EmbeddingProviderConfig) -> Self {
        Self {
            method,
            model,
            embedder,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            context_char_budget: DEFAULT_CONTEXT_BUDGET,
            guardrail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
    /// Source metadata of the chunk plus its `text`.
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineWarning {
    RetrievalDisabled,
    /// Retrieval was requested but the index has no entries.
    EmptyIndex,
    /// Lower-ranked chunks left out of the prompt to fit the context budget.
    ContextTruncated { dropped: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub text: String,
    /// Retrieval hits in rank order.
    pub citations: Vec<Citation>,
    pub guardrail_events: Vec<GuardrailEvent>,
    pub warnings: Vec<PipelineWarning>,
}

pub struct Pipeline {
    method: PromptMethod,
    templates: PromptTemplates,
    embedder: Box<dyn Embedder>,
    model: Box<dyn ChatModel>,
    retrieval_k: usize,
    context_char_budget: usize,
    guardrail: Option<GuardrailSetup>,
    registry: ValidatorRegistry,
}

impl Pipeline {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        config.method.validate()?;
        let mut p = Self::from_parts(config.method.clone(), config.embedder.build()?, config.model.build()?)
            .with_retrieval_k(config.retrieval_k)
            .with_context_budget(config.context_char_budget);
        p.guardrail = config.guardrail.clone();
        Ok(p)
    }

    /// Pipeline over already-built components, with default settings.
    pub fn from_parts(method: PromptMethod, embedder: Box<dyn Embedder>, model: Box<dyn ChatModel>) -> Self {
        Self {
            method,
            templates: PromptTemplates::default(),
            embedder,
            model,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            context_char_budget: DEFAULT_CONTEXT_BUDGET,
            guardrail: None,
            registry: ValidatorRegistry::default(),
        }
    }

    pub fn with_retrieval_k(mut self, k: usize) -> Self {
        self.retrieval_k = k;
        self
    }

    pub fn with_context_budget(mut self, chars: usize) -> Self {
        self.context_char_budget = chars;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_guardrail(mut self, spec: RailSpec, max_attempts: usize) -> Self {
        self.guardrail = Some(GuardrailSetup { spec, max_attempts });
        self
    }

    pub fn with_registry(mut self, registry: ValidatorRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn method(&self) -> &PromptMethod {
        &self.method
    }

    pub fn model_id(&self) -> &str {
        self.model.model_id()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn retrieval_k(&self) -> usize {
        self.retrieval_k
    }

    /// The prompt that would be sent for `question`, with its citations and
    /// warnings. Performs the single embedding call when retrieval is on.
    pub fn prepare(&self, question: &str, index: &VectorIndex) -> Result<(RenderedPrompt, Vec<Citation>, Vec<PipelineWarning>)> {
        if question.trim().is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        let mut warnings = Vec::new();
        let mut citations = Vec::new();
        let mut passages = Vec::new();

        if self.retrieval_k == 0 {
            warnings.push(PipelineWarning::RetrievalDisabled);
        } else if index.is_empty() {
            warnings.push(PipelineWarning::EmptyIndex);
        } else {
            if let (Some(index_dim), Some(embedder_dim)) = (index.dim(), self.embedder.dim()) {
                if index_dim != embedder_dim {
                    return Err(PipelineError::DimensionMismatch {
                        index: index_dim,
                        embedder: embedder_dim,
                    });
                }
            }
            let query = self.embedder.embed_one(question)?;
            let hits = index.top_k(&query, self.retrieval_k)?;
            let mut used = 0usize;
            let mut dropped = Vec::new();
            for hit in &hits {
                let entry = index.get(&hit.chunk_id).expect("hit ids come from the index");
                let len = entry.text.chars().count();
                if dropped.is_empty() && used + len <= self.context_char_budget {
                    used += len;
                    passages.push(ContextPassage::from(entry));
                } else {
                    dropped.push(hit.chunk_id.clone());
                }
                let mut metadata = entry.metadata.clone();
                metadata.insert("text".into(), entry.text.clone());
                citations.push(Citation {
                    chunk_id: hit.chunk_id.clone(),
                    score: hit.score,
                    rank: hit.rank,
                    metadata,
                });
            }
            if !dropped.is_empty() {
                warnings.push(PipelineWarning::ContextTruncated { dropped });
            }
        }

        let prompt = render_with(&self.templates, &self.method, question, &passages)?;
        Ok((prompt, citations, warnings))
    }

    pub fn answer_query(&self, question: &str, index: &VectorIndex) -> Result<Answer> {
        let (prompt, citations, warnings) = self.prepare(question, index)?;
        let (text, guardrail_events) = match &self.guardrail {
            Some(g) => {
                let out = enforce(&prompt, self.model.as_ref(), &g.spec, &self.registry, g.max_attempts)?;
                (out.text, out.events)
            }
            None => (self.model.complete(&prompt)?.text, Vec::new()),
        };
        Ok(Answer {
            question: question.to_string(),
            text,
            citations,
            guardrail_events,
            warnings,
        })
    }
}

/// One-shot convenience over [`Pipeline::from_config`].
pub fn answer_query(question: &str, config: &PipelineConfig, index: &VectorIndex) -> Result<Answer> {
    Pipeline::from_config(config)?.answer_query(question, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingVector, HashEmbedder};
    use crate::generation::{EchoModel, ScriptedModel};
    use crate::guardrails::{parse_rail, DEFAULT_RAIL};
    use crate::store::IndexEntry;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting {
        inner: HashEmbedder,
        calls: Arc<AtomicUsize>,
    }

    impl Embedder for Counting {
        fn dim(&self) -> Option<usize> {
            self.inner.dim()
        }
        fn embed(&self, texts: &[String]) -> crate::embedding::Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    const TEXTS: [&str; 4] = [
        "Patience is light",
        "Cleanliness is half of faith",
        "What is sabr?",
        "The strong man controls himself when angry",
    ];

    fn index(h: &HashEmbedder) -> VectorIndex {
        let mut idx = VectorIndex::new();
        idx.add(
            TEXTS
                .iter()
                .enumerate()
                .map(|(i, t)| IndexEntry {
                    chunk_id: format!("h{i}#0"),
                    vector: h.embed_text(t).unwrap(),
                    text: t.to_string(),
                    metadata: BTreeMap::from([("source".into(), "fixture".into())]),
                })
                .collect(),
        )
        .unwrap();
        idx
    }

    fn pipeline(calls: Arc<AtomicUsize>) -> Pipeline {
        let h = HashEmbedder::new(64, 7).unwrap();
        Pipeline::from_parts(PromptMethod::ZeroShot, Box::new(Counting { inner: h, calls }), Box::new(EchoModel))
            .with_retrieval_k(3)
    }

    #[test]
    fn retrieves_exact_chunk_first_with_one_embedding_call() {
        let calls = Arc::new(AtomicUsize::new(0));
        let p = pipeline(calls.clone());
        let idx = index(&HashEmbedder::new(64, 7).unwrap());
        let answer = p.answer_query("What is sabr?", &idx).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(answer.text, "What is sabr?");
        assert_eq!(answer.citations.len(), 3);
        assert_eq!(answer.citations[0].chunk_id, "h2#0");
        assert_eq!(answer.citations[0].score, 1.0);
        assert_eq!(answer.citations[0].metadata["text"], "What is sabr?");
        assert_eq!(answer.citations[0].metadata["source"], "fixture");
        // citations mirror the raw hits
        let query = HashEmbedder::new(64, 7).unwrap().embed_text("What is sabr?").unwrap();
        let hits = idx.top_k(&query, 3).unwrap();
        for (c, h) in answer.citations.iter().zip(&hits) {
            assert_eq!((&c.chunk_id, c.score, c.rank), (&h.chunk_id, h.score, h.rank));
        }
        assert!(answer.warnings.is_empty());
    }

    #[test]
    fn retrieval_disabled_has_no_context() {
        let calls = Arc::new(AtomicUsize::new(0));
        let p = pipeline(calls.clone()).with_retrieval_k(0);
        let idx = index(&HashEmbedder::new(64, 7).unwrap());
        let (prompt, cites, warnings) = p.prepare("What is sabr?", &idx).unwrap();
        assert!(cites.is_empty());
        assert_eq!(prompt.final_user_message(), Some("What is sabr?"));
        assert_eq!(warnings, vec![PipelineWarning::RetrievalDisabled]);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn empty_index_degrades() {
        let p = pipeline(Arc::new(AtomicUsize::new(0))).with_retrieval_k(5);
        let answer = p.answer_query("What is sabr?", &VectorIndex::new()).unwrap();
        assert_eq!(answer.warnings, vec![PipelineWarning::EmptyIndex]);
        assert!(answer.citations.is_empty());
        assert_eq!(answer.text, "What is sabr?");
    }

    #[test]
    fn context_budget_drops_whole_low_ranked_chunks() {
        let p = pipeline(Arc::new(AtomicUsize::new(0))).with_retrieval_k(4).with_context_budget(20);
        let idx = index(&HashEmbedder::new(64, 7).unwrap());
        let (prompt, cites, warnings) = p.prepare("What is sabr?", &idx).unwrap();
        assert_eq!(cites.len(), 4);
        let PipelineWarning::ContextTruncated { dropped } = &warnings[0] else {
            panic!("{warnings:?}")
        };
        assert_eq!(dropped.len(), 3);
        let last = prompt.final_user_message().unwrap();
        assert!(last.contains("[1] chunk_id=h2#0"));
        assert!(!last.contains("[2]"));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = pipeline(Arc::new(AtomicUsize::new(0)));
        let idx = index(&HashEmbedder::new(32, 7).unwrap());
        assert!(matches!(
            p.answer_query("q?", &idx),
            Err(PipelineError::DimensionMismatch { index: 32, embedder: 64 })
        ));
    }

    #[test]
    fn guardrail_terminal_failure_carries_last_text() {
        let h = HashEmbedder::new(64, 7).unwrap();
        let p = Pipeline::from_parts(PromptMethod::ZeroShot, Box::new(h), Box::new(ScriptedModel::new(["damn it"])))
            .with_guardrail(parse_rail(DEFAULT_RAIL).unwrap(), 2);
        match p.answer_query("What is sabr?", &VectorIndex::new()) {
            Err(PipelineError::GuardrailRejected { last_text, events, .. }) => {
                assert_eq!(last_text, "damn it");
                assert_eq!(events.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn from_config_with_mocks() {
        let cfg = PipelineConfig::new(PromptMethod::ZeroShot, ModelConfig::MockEcho, EmbeddingProviderConfig::deterministic(64, 7));
        let a = answer_query("What is sabr?", &cfg, &index(&HashEmbedder::new(64, 7).unwrap())).unwrap();
        assert_eq!(a.citations[0].chunk_id, "h2#0");
        assert!(matches!(answer_query("  ", &cfg, &VectorIndex::new()), Err(PipelineError::EmptyQuestion)));
    }
}
