use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EvalError, Result, TokenEmbeddingSequence};
use crate::embedding::{tokenize, EmbeddingError, EmbeddingVector, HashEmbedder, DEFAULT_API_KEY_ENV};
use crate::http::{self, RetryPolicy};

/// Produces one embedding per token of a text.
pub trait TokenEmbedder: Send + Sync {
    fn token_embed(&self, text: &str) -> Result<TokenEmbeddingSequence>;
}

/// Each whitespace token embedded on its own by the hash embedder.
impl TokenEmbedder for HashEmbedder {
    fn token_embed(&self, text: &str) -> Result<TokenEmbeddingSequence> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EvalError::EmptyText);
        }
        let vectors = tokens
            .iter()
            .map(|t| self.embed_tokens(std::slice::from_ref(t)))
            .collect::<Result<Vec<_>, EmbeddingError>>()?;
        TokenEmbeddingSequence::new(tokens, vectors)
    }
}

pub fn token_embed(text: &str, embedder: &dyn TokenEmbedder) -> Result<TokenEmbeddingSequence> {
    embedder.token_embed(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenEmbedderConfig {
    Deterministic {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// POST `{"model", "input"}` to `endpoint`; the response carries
    /// parallel `tokens` and `vectors` arrays.
    Remote {
        endpoint: String,
        model_name: String,
        #[serde(default = "default_key_env")]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_key_env() -> Option<String> {
    Some(DEFAULT_API_KEY_ENV.into())
}
fn default_timeout_secs() -> u64 {
    60
}

impl TokenEmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn TokenEmbedder>> {
        Ok(match self {
            Self::Deterministic { dim, seed } => Box::new(HashEmbedder::new(*dim, *seed)?),
            Self::Remote { .. } => Box::new(RemoteTokenEmbedder::from_config(self)?),
        })
    }
}

pub struct RemoteTokenEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model_name: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteTokenEmbedder {
    pub fn from_config(config: &TokenEmbedderConfig) -> Result<Self> {
        let TokenEmbedderConfig::Remote {
            endpoint,
            model_name,
            api_key_env,
            timeout_secs,
            retry,
        } = config
        else {
            return Err(EvalError::Provider("not a remote token provider".into()));
        };
        if endpoint.trim().is_empty() || model_name.trim().is_empty() {
            return Err(EvalError::Provider("remote token provider needs an endpoint and a model name".into()));
        }
        Ok(Self {
            client: http::client(Duration::from_secs(*timeout_secs)),
            endpoint: endpoint.clone(),
            model_name: model_name.clone(),
            api_key: http::api_key_from_env(api_key_env.as_deref()),
            retry: *retry,
        })
    }
}

#[derive(Deserialize)]
struct TokenResponse {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl TokenEmbedder for RemoteTokenEmbedder {
    fn token_embed(&self, text: &str) -> Result<TokenEmbeddingSequence> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let body = json!({ "model": self.model_name, "input": text });
        let response = http::post_json(&self.client, &self.endpoint, self.api_key.as_deref(), &body, &self.retry)
            .map_err(EmbeddingError::from)?;
        let decoded: TokenResponse = serde_json::from_value(response)
            .map_err(|e| EmbeddingError::Decode(format!("token response: {e}")))?;
        let vectors = decoded
            .vectors
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        TokenEmbeddingSequence::new(decoded.tokens, vectors)
    }
}
