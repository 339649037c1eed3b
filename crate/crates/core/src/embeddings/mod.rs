//! Text embedders and the similarity measure used for ranking.

mod cache;
mod local_hash;
mod remote;
pub mod tfidf;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedEmbedder, EmbeddingCache};
pub(crate) use local_hash::fnv1a64;
pub use local_hash::LocalHashEmbedder;
pub use remote::RemoteEmbedder;
pub use tfidf::tfidf_rank;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite or empty embedding")]
    InvalidVector,
    #[error("nothing to embed")]
    EmptyInput,
    #[error("no embedding available for text: {0:.60}")]
    Unavailable(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("cache io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    pub provider_tag: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_tag: impl Into<String>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        Ok(EmbeddingVector {
            values,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|u.v| / (|u| |v|)` on raw slices.
pub fn cosine_abs_slices(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot(u, v).abs() / (nu * nv)).min(1.0))
}

/// Absolute cosine similarity, in `[0, 1]`.
pub fn cosine_abs(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_abs_slices(&u.values, &v.values)
}

pub trait Embedder: Send + Sync {
    /// Identifies the provider and model; used as the cache namespace.
    fn tag(&self) -> String;

    fn dim(&self) -> usize;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    LocalHash,
    Tfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub dim: usize,
    pub max_batch: usize,
    /// Total attempts per request before giving up.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub request_timeout_s: f64,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::LocalHash,
            endpoint_url: None,
            model_name: None,
            api_key_env: "OPENAI_API_KEY".into(),
            dim: 1536,
            max_batch: 64,
            retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            request_timeout_s: 60.0,
            cache_dir: None,
            seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn local_hash(dim: usize) -> Self {
        ProviderConfig {
            kind: ProviderKind::LocalHash,
            dim,
            ..Default::default()
        }
    }

    pub fn remote(
        endpoint_url: impl Into<String>,
        model_name: impl Into<String>,
        dim: usize,
    ) -> Self {
        ProviderConfig {
            kind: ProviderKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            model_name: Some(model_name.into()),
            dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        match self.kind {
            ProviderKind::Remote => {
                if self.endpoint_url.is_none() || self.model_name.is_none() {
                    return bad("remote provider needs endpoint_url and model_name");
                }
                if self.max_batch == 0 || self.max_in_flight == 0 {
                    return bad("max_batch and max_in_flight must be positive");
                }
            }
            ProviderKind::LocalHash => {}
            ProviderKind::Tfidf => return bad("tfidf is a ranking baseline, not an embedder"),
        }
        Ok(())
    }
}

/// Builds the embedder described by `cfg`, wrapped in a disk cache when
/// `cache_dir` is set.
pub fn build_embedder(cfg: &ProviderConfig) -> Result<Box<dyn Embedder>, EmbedError> {
    cfg.validate()?;
    let inner: Box<dyn Embedder> = match cfg.kind {
        ProviderKind::Remote => Box::new(RemoteEmbedder::new(cfg.clone())?),
        ProviderKind::LocalHash => Box::new(LocalHashEmbedder::new(cfg.dim, cfg.seed)),
        ProviderKind::Tfidf => unreachable!("rejected by validate"),
    };
    Ok(match &cfg.cache_dir {
        Some(dir) => Box::new(CachedEmbedder::new(inner, EmbeddingCache::new(dir))),
        None => inner,
    })
}

pub fn embed(texts: &[&str], cfg: &ProviderConfig) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    build_embedder(cfg)?.embed(texts)
}

/// Embeddings supplied up front, keyed by exact text.
#[derive(Debug, Clone, Default)]
pub struct StaticEmbedder {
    tag: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl StaticEmbedder {
    pub fn new(tag: impl Into<String>, dim: usize) -> Self {
        StaticEmbedder {
            tag: tag.into(),
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) -> Result<(), EmbedError> {
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        self.table.insert(text.into(), values);
        Ok(())
    }
}

impl Embedder for StaticEmbedder {
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let v = self
                    .table
                    .get(*t)
                    .ok_or_else(|| EmbedError::Unavailable(t.to_string()))?;
                EmbeddingVector::new(v.clone(), &self.tag)
            })
            .collect()
    }
}
