//! Chat-completion clients: an OpenAI-compatible remote client and
//! deterministic mocks for offline runs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::QaPair;
use crate::embedding::DEFAULT_API_KEY_ENV;
use crate::http::{self, HttpFailure, RetryPolicy};
use crate::prompting::{PromptError, RenderedPrompt};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(#[from] PromptError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("chat transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("unexpected chat response: {0}")]
    Decode(String),
    #[error("no scripted answer for question {0:?}")]
    LookupMiss(String),
}

impl GenerationError {
    /// True when the provider could not be reached or is overloaded.
    pub fn is_unavailable(&self) -> bool {
        match self {
            GenerationError::Transport { .. } => true,
            GenerationError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

impl From<HttpFailure> for GenerationError {
    fn from(f: HttpFailure) -> Self {
        match f {
            HttpFailure::Transport { attempts, message } => GenerationError::Transport { attempts, message },
            HttpFailure::Status { status, body, .. } => GenerationError::Provider { status, body },
        }
    }
}

pub type Result<T, E = GenerationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Model output. `text` may be empty; callers decide what that means.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

pub trait ChatModel: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Remote {
        endpoint: String,
        /// Base or fine-tuned model id.
        model_id: String,
        #[serde(default = "default_key_env")]
        api_key_env: Option<String>,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
    /// Answers with the user's question.
    MockEcho,
    /// Answers every prompt with `text`.
    MockFixed { text: String },
    /// Answers with the entry keyed by the exact question text.
    MockLookup { answers: BTreeMap<String, String> },
}

fn default_key_env() -> Option<String> {
    Some(DEFAULT_API_KEY_ENV.into())
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_secs() -> u64 {
    120
}

impl ModelConfig {
    pub fn remote(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        ModelConfig::Remote {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key_env: default_key_env(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
        }
    }

    /// A lookup mock that returns each pair's reference answer.
    pub fn lookup_from_pairs(pairs: &[QaPair]) -> Self {
        ModelConfig::MockLookup {
            answers: pairs
                .iter()
                .map(|p| (p.question.clone(), p.reference_answer.clone()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModelConfig::Remote {
            endpoint,
            model_id,
            temperature,
            ..
        } = self
        {
            if endpoint.trim().is_empty() || model_id.trim().is_empty() {
                return Err(GenerationError::InvalidConfig(
                    "remote model needs an endpoint and a model id".into(),
                ));
            }
            if !(temperature.is_finite() && *temperature >= 0.0) {
                return Err(GenerationError::InvalidConfig(format!(
                    "temperature must be >= 0, got {temperature}"
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ChatModel>> {
        self.validate()?;
        Ok(match self {
            ModelConfig::Remote { .. } => Box::new(RemoteChatModel::from_config(self)?),
            ModelConfig::MockEcho => Box::new(EchoModel),
            ModelConfig::MockFixed { text } => Box::new(FixedModel { text: text.clone() }),
            ModelConfig::MockLookup { answers } => Box::new(LookupModel {
                answers: answers.clone(),
            }),
        })
    }

    /// Identifier used in reports.
    pub fn model_id(&self) -> &str {
        match self {
            ModelConfig::Remote { model_id, .. } => model_id,
            ModelConfig::MockEcho => "mock-echo",
            ModelConfig::MockFixed { .. } => "mock-fixed",
            ModelConfig::MockLookup { .. } => "mock-lookup",
        }
    }
}

/// Validates the prompt and calls the model built from `config`.
pub fn complete(prompt: &RenderedPrompt, config: &ModelConfig) -> Result<Completion> {
    config.build()?.complete(prompt)
}

fn mock_completion(text: String, model_id: &str) -> Completion {
    Completion {
        text,
        model_id: model_id.to_string(),
        usage: None,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EchoModel;

impl ChatModel for EchoModel {
    fn model_id(&self) -> &str {
        "mock-echo"
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion> {
        prompt.validate()?;
        Ok(mock_completion(prompt.question.clone(), self.model_id()))
    }
}

#[derive(Debug, Clone)]
pub struct FixedModel {
    pub text: String,
}

impl ChatModel for FixedModel {
    fn model_id(&self) -> &str {
        "mock-fixed"
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion> {
        prompt.validate()?;
        Ok(mock_completion(self.text.clone(), self.model_id()))
    }
}

#[derive(Debug, Clone)]
pub struct LookupModel {
    pub answers: BTreeMap<String, String>,
}

impl ChatModel for LookupModel {
    fn model_id(&self) -> &str {
        "mock-lookup"
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion> {
        prompt.validate()?;
        self.answers
            .get(&prompt.question)
            .map(|a| mock_completion(a.clone(), self.model_id()))
            .ok_or_else(|| GenerationError::LookupMiss(prompt.question.clone()))
    }
}

/// Plays back `responses` in order, repeating the last one, and counts calls.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    responses: Vec<String>,
    calls: AtomicUsize,
    seen: std::sync::Mutex<Vec<RenderedPrompt>>,
}

impl ScriptedModel {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<RenderedPrompt> {
        self.seen.lock().expect("prompt log poisoned").clone()
    }
}

impl ChatModel for ScriptedModel {
    fn model_id(&self) -> &str {
        "mock-scripted"
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion> {
        prompt.validate()?;
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().expect("prompt log poisoned").push(prompt.clone());
        let text = self
            .responses
            .get(n)
            .or(self.responses.last())
            .cloned()
            .unwrap_or_default();
        Ok(mock_completion(text, self.model_id()))
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct RemoteChatModel {
    client: reqwest::blocking::Client,
    url: String,
    model_id: String,
    api_key: Option<String>,
    temperature: f64,
    max_tokens: u32,
    retry: RetryPolicy,
}

impl RemoteChatModel {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let ModelConfig::Remote {
            endpoint,
            model_id,
            api_key_env,
            temperature,
            max_tokens,
            timeout_secs,
            retry,
        } = config
        else {
            return Err(GenerationError::InvalidConfig("not a remote model".into()));
        };
        Ok(Self {
            client: http::client(Duration::from_secs(*timeout_secs)),
            url: http::join_url(endpoint, "chat/completions"),
            model_id: model_id.clone(),
            api_key: http::api_key_from_env(api_key_env.as_deref()),
            temperature: *temperature,
            max_tokens: *max_tokens,
            retry: *retry,
        })
    }
}

impl ChatModel for RemoteChatModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion> {
        prompt.validate()?;
        let body = json!({
            "model": self.model_id,
            "messages": prompt.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let response = http::post_json(&self.client, &self.url, self.api_key.as_deref(), &body, &self.retry)?;
        let message = response
            .pointer("/choices/0/message")
            .ok_or_else(|| GenerationError::Decode("missing choices[0].message".into()))?;
        let text = match message.get("content") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Null) | None => String::new(),
            Some(other) => return Err(GenerationError::Decode(format!("content is not text: {other}"))),
        };
        let usage = response.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        let model_id = response
            .get("model")
            .and_then(|m| m.as_str())
            .unwrap_or(&self.model_id)
            .to_string();
        Ok(Completion { text, model_id, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing;
    use crate::prompting::{render, PromptMethod};

    fn zero_shot(q: &str) -> RenderedPrompt {
        render(&PromptMethod::ZeroShot, q, &[]).unwrap()
    }

    #[test]
    fn echo_returns_question() {
        let c = complete(&zero_shot("What is sabr?"), &ModelConfig::MockEcho).unwrap();
        assert_eq!(c.text, "What is sabr?");
        assert_eq!(c.model_id, "mock-echo");
    }

    #[test]
    fn lookup_hits_and_misses() {
        let pairs = vec![QaPair {
            qa_id: "1".into(),
            question: "What is sabr?".into(),
            reference_answer: "Sabr is steadfast patience.".into(),
            source_url: None,
        }];
        let model = ModelConfig::lookup_from_pairs(&pairs).build().unwrap();
        assert_eq!(
            model.complete(&zero_shot("What is sabr?")).unwrap().text,
            "Sabr is steadfast patience."
        );
        assert!(matches!(
            model.complete(&zero_shot("What is zakat?")),
            Err(GenerationError::LookupMiss(_))
        ));
    }

    #[test]
    fn scripted_counts_calls() {
        let m = ScriptedModel::new(["a", "b"]);
        let p = zero_shot("q");
        assert_eq!(m.complete(&p).unwrap().text, "a");
        assert_eq!(m.complete(&p).unwrap().text, "b");
        assert_eq!(m.complete(&p).unwrap().text, "b");
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn config_defaults() {
        let cfg: ModelConfig =
            serde_json::from_str(r#"{"kind":"remote","endpoint":"http://h/v1","model_id":"ft:gpt-3.5-turbo:org::abc"}"#)
                .unwrap();
        match &cfg {
            ModelConfig::Remote { temperature, .. } => assert_eq!(*temperature, 0.0),
            _ => panic!(),
        }
        assert_eq!(cfg.model_id(), "ft:gpt-3.5-turbo:org::abc");
        assert!(ModelConfig::remote("http://h", "").build().is_err());
    }

    #[test]
    fn remote_roundtrip() {
        let stub = testing::serve(|body, _| {
            let req: serde_json::Value = serde_json::from_str(body).unwrap();
            let last = req["messages"].as_array().unwrap().last().unwrap()["content"].clone();
            assert_eq!(req["temperature"], 0.0);
            (
                200,
                json!({
                    "model": "gpt-3.5-turbo-0613",
                    "choices": [{"message": {"role": "assistant", "content": format!("re: {}", last.as_str().unwrap())}}],
                    "usage": {"prompt_tokens": 7, "completion_tokens": 3}
                })
                .to_string(),
            )
        });
        let mut cfg = ModelConfig::remote(stub.base_url(), "gpt-3.5-turbo");
        if let ModelConfig::Remote { api_key_env, .. } = &mut cfg {
            *api_key_env = None;
        }
        let c = complete(&zero_shot("What is sabr?"), &cfg).unwrap();
        assert_eq!(c.text, "re: What is sabr?");
        assert_eq!(c.model_id, "gpt-3.5-turbo-0613");
        assert_eq!(
            c.usage,
            Some(Usage {
                prompt_tokens: 7,
                completion_tokens: 3
            })
        );
    }

    #[test]
    fn provider_error_body_is_surfaced() {
        let stub = testing::serve(|_, _| (400, r#"{"error":{"message":"model not found"}}"#.into()));
        let cfg = ModelConfig::remote(stub.base_url(), "nope");
        let err = complete(&zero_shot("q"), &cfg).unwrap_err();
        assert!(err.to_string().contains("model not found"), "{err}");
        assert!(!err.is_unavailable());
    }

    #[test]
    fn unreachable_endpoint_three_attempts() {
        let hole = testing::black_hole();
        let mut cfg = ModelConfig::remote(hole.base_url(), "gpt-3.5-turbo");
        if let ModelConfig::Remote { retry, .. } = &mut cfg {
            retry.initial_backoff = Duration::from_millis(5);
        }
        let err = complete(&zero_shot("q"), &cfg).unwrap_err();
        assert!(matches!(err, GenerationError::Transport { attempts: 3, .. }), "{err:?}");
        assert!(err.is_unavailable());
        assert_eq!(hole.hits.load(Ordering::SeqCst), 3);
    }
}
