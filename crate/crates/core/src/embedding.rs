//! Embedding vectors, cosine similarity, and embedding providers.
//!
//! Two providers sit behind the [`Embedder`] trait:
//!
//! - [`HashEmbedder`]: offline and deterministic. Text is lowercased and split
//!   on whitespace; each token is hashed with the seed into one of `dim`
//!   buckets with a +1 or -1 sign, and the bucket counts are L2-normalized.
//! - [`RemoteEmbedder`]: the OpenAI-compatible `/embeddings` endpoint, in
//!   batches of at most 128 inputs, with bounded parallelism and retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{self, HttpFailure, RetryPolicy};
use crate::parallel::{map_bounded, DEFAULT_PARALLELISM};

/// Largest number of inputs sent in one remote request.
pub const MAX_BATCH: usize = 128;
/// Smallest dimension accepted by the deterministic provider.
pub const MIN_HASH_DIM: usize = 8;
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-ada-002";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("input {index} is empty")]
    EmptyText { index: usize },
    #[error("embedding must have at least one dimension")]
    ZeroDim,
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("hash embedding of {0:?} cancelled to the zero vector")]
    Degenerate(String),
    #[error("invalid embedding provider config: {0}")]
    InvalidConfig(String),
    #[error("embedding transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("unexpected embedding response: {0}")]
    Decode(String),
}

impl From<HttpFailure> for EmbeddingError {
    fn from(f: HttpFailure) -> Self {
        match f {
            HttpFailure::Transport { attempts, message } => EmbeddingError::Transport { attempts, message },
            HttpFailure::Status { status, body, .. } => EmbeddingError::Provider { status, body },
        }
    }
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// A finite, non-empty float vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDim);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine from a dot product and the two squared norms.
///
/// `sqrt(a2 * b2)` keeps `cos(v, v)` exactly 1.0, because the correctly
/// rounded square root of a correctly rounded square returns the original
/// value. Falls back to the product of norms when the product leaves the
/// normal range. Parallel vectors can round one ulp past 1, hence the clamp.
pub(crate) fn cosine_from_parts(dot: f64, a2: f64, b2: f64) -> f64 {
    let product = a2 * b2;
    let cos = if product.is_normal() {
        dot / product.sqrt()
    } else {
        dot / (a2.sqrt() * b2.sqrt())
    };
    cos.clamp(-1.0, 1.0)
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (a2, b2) = (a.norm_squared(), b.norm_squared());
    if a2 == 0.0 || b2 == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(a.values(), b.values()), a2, b2))
}

/// Produces one vector per input text, in input order.
pub trait Embedder: Send + Sync {
    /// Output dimension when known ahead of the first call.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed(&[text.to_string()])?;
        out.pop().ok_or(EmbeddingError::EmptyInput)
    }
}

fn check_texts(texts: &[String]) -> Result<()> {
    if texts.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText { index });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProviderConfig {
    Remote {
        endpoint: String,
        #[serde(default = "default_embedding_model")]
        model_name: String,
        /// Environment variable holding the bearer token.
        #[serde(default = "default_key_env")]
        api_key_env: Option<String>,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_parallelism")]
        parallelism: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
    Deterministic {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_embedding_model() -> String {
    DEFAULT_EMBEDDING_MODEL.into()
}
fn default_key_env() -> Option<String> {
    Some(DEFAULT_API_KEY_ENV.into())
}
fn default_batch() -> usize {
    MAX_BATCH
}
fn default_parallelism() -> usize {
    DEFAULT_PARALLELISM
}
fn default_timeout_secs() -> u64 {
    60
}

impl EmbeddingProviderConfig {
    pub fn deterministic(dim: usize, seed: u64) -> Self {
        Self::Deterministic { dim, seed }
    }

    /// Remote provider with the default model, key variable, and limits.
    pub fn remote(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self::Remote {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            api_key_env: default_key_env(),
            batch_size: MAX_BATCH,
            parallelism: DEFAULT_PARALLELISM,
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Remote {
                endpoint,
                model_name,
                batch_size,
                ..
            } => {
                if endpoint.trim().is_empty() || model_name.trim().is_empty() {
                    return Err(EmbeddingError::InvalidConfig(
                        "remote provider needs an endpoint and a model name".into(),
                    ));
                }
                if *batch_size == 0 || *batch_size > MAX_BATCH {
                    return Err(EmbeddingError::InvalidConfig(format!(
                        "batch_size must be in 1..={MAX_BATCH}"
                    )));
                }
                Ok(())
            }
            Self::Deterministic { dim, .. } if *dim < MIN_HASH_DIM => Err(EmbeddingError::InvalidConfig(
                format!("deterministic provider needs dim >= {MIN_HASH_DIM}, got {dim}"),
            )),
            Self::Deterministic { .. } => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match self {
            Self::Deterministic { dim, seed } => Box::new(HashEmbedder::new(*dim, *seed)?),
            Self::Remote { .. } => Box::new(RemoteEmbedder::from_config(self)?),
        })
    }
}

/// One-shot convenience: build the provider and embed.
pub fn embed(texts: &[String], config: &EmbeddingProviderConfig) -> Result<Vec<EmbeddingVector>> {
    config.build()?.embed(texts)
}

/// Lowercase, whitespace-split tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Feature-hashing embedder for offline runs.
///
/// Bucket and sign come from a 64-bit hash: FNV-1a over the seed's
/// little-endian bytes followed by the token's UTF-8 bytes, then the
/// SplitMix64 finalizer. Bucket is `h % dim`, sign is negative when the top
/// bit is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < MIN_HASH_DIM {
            return Err(EmbeddingError::InvalidConfig(format!(
                "deterministic provider needs dim >= {MIN_HASH_DIM}, got {dim}"
            )));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_hash(&self, token: &str) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for byte in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(PRIME);
        }
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^ (h >> 31)
    }

    /// Embeds already-tokenized input.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<EmbeddingVector> {
        let mut counts = vec![0.0f64; self.dim];
        for token in tokens {
            let h = self.token_hash(token.as_ref());
            let bucket = (h % self.dim as u64) as usize;
            counts[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            let joined = tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
            return Err(EmbeddingError::Degenerate(joined));
        }
        counts.iter_mut().for_each(|c| *c /= norm);
        EmbeddingVector::new(counts)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText { index: 0 });
        }
        self.embed_tokens(&tokenize(text))
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        check_texts(texts)?;
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

/// Client for an OpenAI-compatible embeddings endpoint.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model_name: String,
    api_key: Option<String>,
    batch_size: usize,
    parallelism: usize,
    retry: RetryPolicy,
}

impl RemoteEmbedder {
    pub fn from_config(config: &EmbeddingProviderConfig) -> Result<Self> {
        config.validate()?;
        let EmbeddingProviderConfig::Remote {
            endpoint,
            model_name,
            api_key_env,
            batch_size,
            parallelism,
            timeout_secs,
            retry,
        } = config
        else {
            return Err(EmbeddingError::InvalidConfig("not a remote provider".into()));
        };
        Ok(Self {
            client: http::client(Duration::from_secs(*timeout_secs)),
            url: http::join_url(endpoint, "embeddings"),
            model_name: model_name.clone(),
            api_key: http::api_key_from_env(api_key_env.as_deref()),
            batch_size: *batch_size,
            parallelism: *parallelism,
            retry: *retry,
        })
    }

    fn embed_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({ "model": self.model_name, "input": batch });
        let response = http::post_json(&self.client, &self.url, self.api_key.as_deref(), &body, &self.retry)?;
        let data = response
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| EmbeddingError::Decode("missing 'data' array".into()))?;
        if data.len() != batch.len() {
            return Err(EmbeddingError::Decode(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; batch.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(|i| i.as_u64())
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(|e| serde_json::from_value(e.clone()).ok())
                .ok_or_else(|| EmbeddingError::Decode(format!("item {pos} has no numeric 'embedding'")))?;
            let slot = slots
                .get_mut(index)
                .ok_or_else(|| EmbeddingError::Decode(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector::new(values)?);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| EmbeddingError::Decode(format!("no embedding for input {i}"))))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        check_texts(texts)?;
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = map_bounded(&batches, self.parallelism, |b| self.embed_batch(b));
        let mut out = Vec::with_capacity(texts.len());
        for batch in results {
            out.extend(batch?);
        }
        let dim = out[0].dim();
        if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing;
    use std::sync::atomic::Ordering;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[1.0, 2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap(),
            0.7071067811865475
        );
    }

    #[test]
    fn parallel_cosine_stays_in_range() {
        let a = EmbeddingVector::new(vec![9.419268465526855]).unwrap();
        let b = EmbeddingVector::new(vec![5.377765642276414]).unwrap();
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 1.0);
        let neg = EmbeddingVector::new(vec![-5.377765642276414]).unwrap();
        assert_eq!(cosine_similarity(&a, &neg).unwrap(), -1.0);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { expected: 2, found: 3 })
        );
        assert_eq!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroNorm)
        );
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit() {
        let e = HashEmbedder::new(16, 7).unwrap();
        let a = e.embed_text("sabr").unwrap();
        let b = e.embed_text("sabr").unwrap();
        assert_eq!(
            a.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!((a.norm_squared() - 1.0).abs() < 1e-9);
        let p = e.embed_text("patience and prayer").unwrap();
        let q = e.embed_text("Patience  AND prayer").unwrap();
        assert_eq!(cosine_similarity(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn hash_embedder_rejects_empty_and_small_dim() {
        let e = HashEmbedder::new(16, 7).unwrap();
        assert!(matches!(e.embed(&["".into()]), Err(EmbeddingError::EmptyText { index: 0 })));
        assert!(matches!(e.embed(&[]), Err(EmbeddingError::EmptyInput)));
        assert!(HashEmbedder::new(4, 0).is_err());
        assert!(EmbeddingProviderConfig::deterministic(7, 0).build().is_err());
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg: EmbeddingProviderConfig =
            serde_json::from_str(r#"{"kind":"remote","endpoint":"http://x/v1"}"#).unwrap();
        match &cfg {
            EmbeddingProviderConfig::Remote {
                model_name, batch_size, ..
            } => {
                assert_eq!(model_name, DEFAULT_EMBEDDING_MODEL);
                assert_eq!(*batch_size, 128);
            }
            _ => panic!("expected remote"),
        }
        assert!(EmbeddingProviderConfig::remote("", "m").validate().is_err());
    }

    #[test]
    fn remote_batches_and_preserves_order() {
        // reply with embeddings in reverse order, tagged by index; value encodes input text length
        let stub = testing::serve(|body, _| {
            let req: serde_json::Value = serde_json::from_str(body).unwrap();
            let inputs = req["input"].as_array().unwrap();
            let mut data: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f64, 1.0]}))
                .collect();
            data.reverse();
            (200, json!({ "data": data }).to_string())
        });
        let mut cfg = EmbeddingProviderConfig::remote(stub.base_url(), "m");
        if let EmbeddingProviderConfig::Remote { batch_size, api_key_env, .. } = &mut cfg {
            *batch_size = 2;
            *api_key_env = None;
        }
        let texts: Vec<String> = (1..=5).map(|n| "x".repeat(n)).collect();
        let out = embed(&texts, &cfg).unwrap();
        let firsts: Vec<f64> = out.iter().map(|v| v.values()[0]).collect();
        assert_eq!(firsts, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
        let bodies = stub.bodies.lock().unwrap();
        assert!(bodies.iter().all(|b| b.contains("\"model\":\"m\"")));
    }

    #[test]
    fn remote_transport_failure_after_three_attempts() {
        let hole = testing::black_hole();
        let mut cfg = EmbeddingProviderConfig::remote(hole.base_url(), "m");
        if let EmbeddingProviderConfig::Remote { retry, .. } = &mut cfg {
            retry.initial_backoff = Duration::from_millis(5);
        }
        let err = embed(&["hello".into()], &cfg).unwrap_err();
        assert!(matches!(err, EmbeddingError::Transport { attempts: 3, .. }), "{err:?}");
        assert_eq!(hole.hits.load(Ordering::SeqCst), 3);
    }
}
