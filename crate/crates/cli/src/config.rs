//! Run configuration: one TOML file, overridden by command-line flags.
//!
//! Secrets never live in the file. Remote providers name the environment
//! variable that holds their key.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use groundrag::corpus::{load_corpus, load_qa_dataset, ChunkingConfig, ColumnMapping, QaColumns, SourceDocument};
use groundrag::eval::TokenEmbedderConfig;
use groundrag::guardrails::{parse_rail, RailSpec, DEFAULT_MAX_ATTEMPTS};
use groundrag::pipeline::{GuardrailSetup, DEFAULT_CONTEXT_BUDGET, DEFAULT_RETRIEVAL_K};
use groundrag::prompting::{disjoint_pool, exemplar_select, PromptTemplates};
use groundrag::{EmbeddingProviderConfig, ModelConfig, Pipeline, PipelineConfig, PromptMethod, QaPair, VectorIndex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[default]
    ZeroShot,
    FewShot,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub metadata_columns: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Record mode unless set.
    #[serde(default)]
    pub chunking: Option<ChunkingConfig>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            path: None,
            text_column: default_text_column(),
            id_column: None,
            metadata_columns: Vec::new(),
            delimiter: default_delimiter(),
            chunking: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default = "default_question_column")]
    pub question_column: String,
    #[serde(default = "default_answer_column")]
    pub answer_column: String,
    #[serde(default)]
    pub url_column: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

impl Default for QaSection {
    fn default() -> Self {
        Self {
            path: None,
            id_column: None,
            question_column: default_question_column(),
            answer_column: default_answer_column(),
            url_column: None,
            delimiter: default_delimiter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default = "default_embedder")]
    pub embedder: EmbeddingProviderConfig,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    /// Token embeddings for BERTScore.
    #[serde(default = "default_token_embedder")]
    pub token_embedder: TokenEmbedderConfig,
    #[serde(default)]
    pub index_path: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_budget")]
    pub context_char_budget: usize,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default = "default_few_shot_k")]
    pub few_shot_k: usize,
    /// Replaces the shipped instruction text.
    #[serde(default)]
    pub instruction_path: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub rail_path: Option<PathBuf>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    #[serde(default)]
    pub idf: bool,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub qa: QaSection,
}

fn default_text_column() -> String {
    "text".into()
}
fn default_question_column() -> String {
    "question".into()
}
fn default_answer_column() -> String {
    "answer".into()
}
fn default_delimiter() -> char {
    ','
}
fn default_embedder() -> EmbeddingProviderConfig {
    EmbeddingProviderConfig::deterministic(384, 0)
}
fn default_model() -> ModelConfig {
    ModelConfig::MockEcho
}
fn default_token_embedder() -> TokenEmbedderConfig {
    TokenEmbedderConfig::Deterministic { dim: 64, seed: 0 }
}
fn default_k() -> usize {
    DEFAULT_RETRIEVAL_K
}
fn default_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET
}
fn default_few_shot_k() -> usize {
    groundrag::prompting::DEFAULT_FEW_SHOT_K
}
fn default_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}
fn default_parallelism() -> usize {
    groundrag::parallel::DEFAULT_PARALLELISM
}
fn default_sample_n() -> usize {
    100
}
fn default_bind() -> String {
    DEFAULT_BIND.into()
}

impl Default for AppConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub index: Option<PathBuf>,
    pub model: Option<String>,
    pub embedder: Option<String>,
    pub k: Option<usize>,
    pub method: Option<MethodName>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub rail: Option<PathBuf>,
    pub bind: Option<String>,
}

/// `mock-echo`, `mock-fixed:TEXT`, `mock-lookup[:QA_FILE]` or
/// `remote:MODEL_ID[@ENDPOINT]`. A bare `mock-lookup` answers from the QA
/// set of the run.
pub fn parse_model_spec(spec: &str) -> Result<(ModelConfig, Option<PathBuf>)> {
    let (head, rest) = spec.split_once(':').map_or((spec, None), |(h, r)| (h, Some(r)));
    match (head, rest) {
        ("mock-echo", None) => Ok((ModelConfig::MockEcho, None)),
        ("mock-fixed", Some(text)) => Ok((ModelConfig::MockFixed { text: text.into() }, None)),
        ("mock-lookup", path) => Ok((
            ModelConfig::MockLookup {
                answers: Default::default(),
            },
            path.map(PathBuf::from),
        )),
        ("remote", Some(rest)) if !rest.is_empty() => {
            let (id, endpoint) = rest.split_once('@').unwrap_or((rest, DEFAULT_ENDPOINT));
            Ok((ModelConfig::remote(endpoint, id), None))
        }
        _ => Err(CliError::config(format!(
            "bad --model '{spec}' (expected mock-echo, mock-fixed:TEXT, mock-lookup[:QA_FILE] or remote:MODEL[@ENDPOINT])"
        ))),
    }
}

/// `deterministic:DIM[:SEED]` or `remote:MODEL[@ENDPOINT]`.
pub fn parse_embedder_spec(spec: &str) -> Result<EmbeddingProviderConfig> {
    let bad = || {
        CliError::config(format!(
            "bad --embedder '{spec}' (expected deterministic:DIM[:SEED] or remote:MODEL[@ENDPOINT])"
        ))
    };
    let mut parts = spec.splitn(3, ':');
    match (parts.next(), parts.next(), parts.next()) {
        (Some("deterministic"), Some(dim), seed) => {
            let dim = dim.parse().map_err(|_| bad())?;
            let seed = seed.map_or(Ok(0), str::parse).map_err(|_| bad())?;
            Ok(EmbeddingProviderConfig::deterministic(dim, seed))
        }
        (Some("remote"), Some(model), None) if !model.is_empty() => {
            let (model, endpoint) = model.split_once('@').unwrap_or((model, DEFAULT_ENDPOINT));
            Ok(EmbeddingProviderConfig::remote(endpoint, model))
        }
        (Some("remote"), Some(model), Some(port)) => {
            // an endpoint with a port contains a colon
            let joined = format!("{model}:{port}");
            let (model, endpoint) = joined.split_once('@').ok_or_else(bad)?;
            Ok(EmbeddingProviderConfig::remote(endpoint, model))
        }
        _ => Err(bad()),
    }
}

/// Effective configuration for one command.
#[derive(Debug, Clone)]
pub struct Settings {
    pub app: AppConfig,
    /// Directory relative paths in the file are resolved against.
    pub base_dir: PathBuf,
    /// QA file answering a bare or path-qualified `mock-lookup`.
    pub lookup_path: Option<PathBuf>,
    pub lookup_pending: bool,
}

impl Settings {
    pub fn load(config: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (mut app, base_dir) = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let app: AppConfig =
                    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (app, dir)
            }
            None => (AppConfig::default(), PathBuf::new()),
        };
        let resolve = |p: &Option<PathBuf>| p.as_ref().map(|p| base_dir.join(p));
        app.index_path = resolve(&app.index_path);
        app.instruction_path = resolve(&app.instruction_path);
        app.templates_dir = resolve(&app.templates_dir);
        app.rail_path = resolve(&app.rail_path);
        app.corpus.path = resolve(&app.corpus.path);
        app.qa.path = resolve(&app.qa.path);

        let mut lookup_path = None;
        let mut lookup_pending = matches!(&app.model, ModelConfig::MockLookup { answers } if answers.is_empty());
        if let Some(spec) = &overrides.model {
            let (model, path) = parse_model_spec(spec)?;
            lookup_pending = matches!(model, ModelConfig::MockLookup { .. });
            lookup_path = path;
            app.model = model;
        }
        if let Some(spec) = &overrides.embedder {
            app.embedder = parse_embedder_spec(spec)?;
        }
        if let Some(p) = &overrides.index {
            app.index_path = Some(p.clone());
        }
        if let Some(k) = overrides.k {
            app.retrieval_k = k;
        }
        if let Some(m) = overrides.method {
            app.method = m;
        }
        if let Some(s) = overrides.seed {
            app.seed = s;
        }
        if let Some(n) = overrides.n {
            app.sample_n = n;
        }
        if let Some(r) = &overrides.rail {
            app.rail_path = Some(r.clone());
        }
        if let Some(b) = &overrides.bind {
            app.bind = b.clone();
        }
        let settings = Self {
            app,
            base_dir,
            lookup_path,
            lookup_pending,
        };
        settings.check()?;
        Ok(settings)
    }

    fn check(&self) -> Result<()> {
        let a = &self.app;
        if a.parallelism == 0 {
            return Err(CliError::config("parallelism must be at least 1"));
        }
        a.embedder.validate()?;
        a.model.validate()?;
        for path in [&a.instruction_path, &a.templates_dir, &a.rail_path].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn qa_columns(&self) -> QaColumns {
        let q = &self.app.qa;
        QaColumns {
            id_column: q.id_column.clone(),
            question_column: q.question_column.clone(),
            answer_column: q.answer_column.clone(),
            url_column: q.url_column.clone(),
        }
    }

    pub fn load_qa(&self, path: Option<&Path>) -> Result<Vec<QaPair>> {
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| self.app.qa.path.clone())
            .ok_or_else(|| CliError::config("no QA dataset (pass --qa or set qa.path)"))?;
        let loaded = load_qa_dataset(&path, &self.qa_columns(), self.app.qa.delimiter)?;
        if loaded.summary.skipped_empty > 0 {
            tracing::warn!(skipped = loaded.summary.skipped_empty, "QA rows with empty fields skipped");
        }
        Ok(loaded.records)
    }

    pub fn column_mapping(&self) -> ColumnMapping {
        let c = &self.app.corpus;
        let mut m = ColumnMapping::new(c.text_column.clone()).with_metadata(c.metadata_columns.iter().cloned());
        if let Some(id) = &c.id_column {
            m = m.with_id(id.clone());
        }
        m
    }

    pub fn chunking(&self) -> ChunkingConfig {
        self.app.corpus.chunking.unwrap_or_else(ChunkingConfig::record)
    }

    pub fn load_corpus(&self, path: Option<&Path>) -> Result<Vec<SourceDocument>> {
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| self.app.corpus.path.clone())
            .ok_or_else(|| CliError::config("no corpus (pass a corpus file or set corpus.path)"))?;
        let loaded = load_corpus(&path, &self.column_mapping(), self.app.corpus.delimiter)?;
        if loaded.summary.skipped_empty > 0 {
            tracing::warn!(skipped = loaded.summary.skipped_empty, "corpus rows with empty text skipped");
        }
        Ok(loaded.records)
    }

    /// The configured index, or an empty one when none is set.
    pub fn load_index(&self) -> Result<VectorIndex> {
        match &self.app.index_path {
            Some(p) => VectorIndex::load(p).map_err(|e| CliError::new("store", format!("{}: {e}", p.display()))),
            None => Ok(VectorIndex::new()),
        }
    }

    pub fn index_path(&self) -> Result<&Path> {
        self.app
            .index_path
            .as_deref()
            .ok_or_else(|| CliError::config("no index path (pass --index or set index_path)"))
    }

    pub fn rail(&self) -> Result<Option<RailSpec>> {
        self.app
            .rail_path
            .as_ref()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                parse_rail(&text).map_err(|e| CliError::new("rail", format!("{}: {e}", p.display())))
            })
            .transpose()
    }

    /// Model config with lookup answers filled in. `run_qa` is the QA set
    /// of the current command, used when no lookup file was named.
    pub fn model(&self, run_qa: Option<&[QaPair]>) -> Result<ModelConfig> {
        if !self.lookup_pending {
            return Ok(self.app.model.clone());
        }
        let pairs = match (&self.lookup_path, run_qa) {
            (Some(path), _) => self.load_qa(Some(path))?,
            (None, Some(qa)) => qa.to_vec(),
            (None, None) => self.load_qa(None)?,
        };
        Ok(ModelConfig::lookup_from_pairs(&pairs))
    }

    /// The prompting method; few-shot exemplars come from `pool` minus
    /// `held_out`.
    pub fn method(&self, pool: Option<&[QaPair]>, held_out: &HashSet<String>) -> Result<PromptMethod> {
        Ok(match self.app.method {
            MethodName::ZeroShot => PromptMethod::ZeroShot,
            MethodName::Instruction => match &self.app.instruction_path {
                Some(p) => PromptMethod::Instruction {
                    instruction_text: std::fs::read_to_string(p)
                        .map_err(|e| CliError::io(p, e))?
                        .trim_end()
                        .to_string(),
                },
                None => PromptMethod::default_instruction(),
            },
            MethodName::FewShot => {
                let owned;
                let pool = match pool {
                    Some(p) => p,
                    None => {
                        owned = self.load_qa(None)?;
                        &owned
                    }
                };
                let pool = disjoint_pool(pool, held_out);
                PromptMethod::FewShot {
                    exemplars: exemplar_select(&pool, self.app.few_shot_k, self.app.seed, held_out)?,
                }
            }
        })
    }

    pub fn pipeline(&self, method: PromptMethod, model: ModelConfig) -> Result<Pipeline> {
        let a = &self.app;
        let config = PipelineConfig {
            method,
            model,
            embedder: a.embedder.clone(),
            retrieval_k: a.retrieval_k,
            context_char_budget: a.context_char_budget,
            guardrail: self.rail()?.map(|spec| GuardrailSetup {
                spec,
                max_attempts: a.max_attempts,
            }),
        };
        let mut pipeline = Pipeline::from_config(&config)?;
        if let Some(dir) = &a.templates_dir {
            pipeline = pipeline.with_templates(PromptTemplates::from_dir(dir)?);
        }
        Ok(pipeline)
    }

    /// Configuration safe to show or record: no secrets, lookup tables
    /// summarized.
    pub fn redacted(&self) -> Value {
        let mut v = serde_json::to_value(&self.app).expect("config serializes");
        if let Some(answers) = v.pointer_mut("/model/answers") {
            *answers = Value::String(match (self.lookup_pending, &self.lookup_path) {
                (true, Some(path)) => format!("<from {}>", path.display()),
                (true, None) => "<from the QA set>".into(),
                (false, _) => format!("<{} entries>", answers.as_object().map_or(0, |m| m.len())),
            });
        }
        redact(&mut v);
        v
    }
}

const SECRET_KEYS: [&str; 5] = ["api_key", "apikey", "secret", "password", "authorization"];

fn redact(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if SECRET_KEYS.contains(&k.to_ascii_lowercase().as_str()) {
                    *child = Value::String("<redacted>".into());
                } else {
                    redact(child);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}
