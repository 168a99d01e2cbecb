use std::marker::PhantomData;
use std::time::Duration;

use num_traits::Float;
use serde_json::json;

use crate::corpus::SecretRef;
use crate::net::{post_json, HttpError};
use crate::pseudocode::tokenize;

pub const HASH_EMBEDDING_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("unexpected embedding response: {0}")]
    Shape(String),
    #[error("no API key configured")]
    MissingKey,
}

/// Turns text into vectors. Implementations must be deterministic for
/// identical input if retrieval is to be reproducible.
pub trait Embedder<T>: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<T>>, EmbedError>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Offline bag-of-tokens embedder: each lexer token increments the bucket
/// picked by its FNV-1a hash.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: HASH_EMBEDDING_DIM }
    }
}

impl HashEmbedder {
    pub fn vector<T: Float>(&self, text: &str) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        let toks = tokenize(text);
        if toks.is_empty() {
            // keep blank and comment-only lines at unit norm
            let b = (fnv1a(text.trim().as_bytes()) % self.dim as u64) as usize;
            v[b] = T::one();
            return v;
        }
        for t in &toks {
            let b = (fnv1a(t.as_text().as_bytes()) % self.dim as u64) as usize;
            v[b] = v[b] + T::one();
        }
        v
    }
}

impl<T: Float + Send + Sync> Embedder<T> for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<T>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Embeddings endpoint (`POST {api_base}/embeddings`).
pub struct RemoteEmbedder<T> {
    pub api_base: String,
    pub model: String,
    pub api_key: SecretRef,
    pub timeout: Duration,
    _scalar: PhantomData<fn() -> T>,
}

impl<T> RemoteEmbedder<T> {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>, api_key: SecretRef, timeout: Duration) -> Self {
        Self {
            api_base: api_base.into(),
            model: model.into(),
            api_key,
            timeout,
            _scalar: PhantomData,
        }
    }
}

impl<T: Float + Send + Sync> Embedder<T> for RemoteEmbedder<T> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<T>>, EmbedError> {
        let key = self.api_key.resolve().ok_or(EmbedError::MissingKey)?;
        let url = format!("{}/embeddings", self.api_base.trim_end_matches('/'));
        let body = json!({ "model": self.model, "input": texts });
        let resp = post_json(&url, Some(&key), &body, self.timeout)?;
        parse_embedding_response(&resp, texts.len())
    }
}

fn parse_embedding_response<T: Float>(resp: &serde_json::Value, expected: usize) -> Result<Vec<Vec<T>>, EmbedError> {
    let data = resp["data"]
        .as_array()
        .ok_or_else(|| EmbedError::Shape("missing `data` array".into()))?;
    let mut rows: Vec<(usize, Vec<T>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
        let vec = item["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Shape("missing `embedding`".into()))?
            .iter()
            .map(|x| x.as_f64().and_then(T::from))
            .collect::<Option<Vec<T>>>()
            .ok_or_else(|| EmbedError::Shape("non-numeric embedding component".into()))?;
        rows.push((idx, vec));
    }
    if rows.len() != expected {
        return Err(EmbedError::Shape(format!("expected {expected} embeddings, got {}", rows.len())));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}
