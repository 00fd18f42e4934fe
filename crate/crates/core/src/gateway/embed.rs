//! Embedding providers. The bundled [`HashedNgramEmbedder`] needs no network
//! and is what replayed runs and tests use.

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("provider returned {actual} vectors for {expected} texts")]
    CountMismatch { expected: usize, actual: usize },
    #[error("provider returned a vector of dimension {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            EmbedError::EmptyInput => "EMPTY_INPUT",
            EmbedError::EmptyText(_) => "EMPTY_TEXT",
            EmbedError::CountMismatch { .. } | EmbedError::Dimension { .. } => "EMBEDDING_SHAPE",
            EmbedError::Provider(_) => "EMBEDDING_PROVIDER",
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Embeds a batch through `provider`, checking preconditions and the shape of
/// what comes back.
pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<Vec<f32>>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(i));
    }
    let out = provider.embed(texts)?;
    if out.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            actual: out.len(),
        });
    }
    if let Some(v) = out.iter().find(|v| v.len() != provider.dimension()) {
        return Err(EmbedError::Dimension {
            expected: provider.dimension(),
            actual: v.len(),
        });
    }
    Ok(out)
}

/// Signed feature hashing of character trigrams, L2-normalized.
///
/// Text is lowercased and every run of non-alphanumeric characters becomes a
/// single space, then padded with one space on each side. Each trigram
/// hashes (FNV-1a 64) to a bucket; the hash's top bit picks the sign so
/// unrelated texts land near zero similarity instead of sharing a positive
/// bias.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dimension: usize,
}

pub const DEFAULT_EMBEDDING_DIMENSION: usize = 256;

impl HashedNgramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "embedding dimension must be at least 2");
        Self { dimension }
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut cleaned = String::with_capacity(text.len() + 2);
        cleaned.push(' ');
        let mut last_space = true;
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                cleaned.push(c);
                last_space = false;
            } else if !last_space {
                cleaned.push(' ');
                last_space = true;
            }
        }
        if !last_space {
            cleaned.push(' ');
        }
        let chars: Vec<char> = cleaned.chars().collect();
        let mut counts = vec![0.0_f64; self.dimension];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let bucket = (h % self.dimension as u64) as usize;
            counts[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Too short for a trigram, or signs cancelled exactly.
            let bucket = (fnv1a(cleaned.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] = 1.0;
            return counts.into_iter().map(|x| x as f32).collect();
        }
        counts.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn name(&self) -> &str {
        "hashed-trigram"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbeddingProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: String, api_key: Option<String>, model: String, dimension: usize) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            endpoint,
            api_key,
            model,
            dimension,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": texts }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        let mut body: EmbeddingResponse =
            resp.json().map_err(|e| EmbedError::Provider(e.to_string()))?;
        body.data.sort_by_key(|d| d.index);
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::similarity::{cosine_similarity, l2_norm};

    fn texts(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn deterministic_and_unit_length() {
        let e = HashedNgramEmbedder::default();
        let out = embed_texts(&e, &texts(&["Nora Vance", "Nora Vance"])).unwrap();
        assert_eq!(out[0], out[1]);
        assert!((l2_norm(&out[0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batch_shape() {
        let e = HashedNgramEmbedder::default();
        let out = embed_texts(&e, &texts(&["a b c", "second text", "third"])).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.len() == DEFAULT_EMBEDDING_DIMENSION));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let e = HashedNgramEmbedder::default();
        assert!(matches!(embed_texts(&e, &[]), Err(EmbedError::EmptyInput)));
        let err = embed_texts(&e, &texts(&["ok", ""])).unwrap_err();
        assert!(matches!(err, EmbedError::EmptyText(1)));
        assert_eq!(err.code(), "EMPTY_TEXT");
    }

    #[test]
    fn lexical_overlap_raises_similarity() {
        let e = HashedNgramEmbedder::default();
        let v = embed_texts(
            &e,
            &texts(&[
                "Nora Vance and Elias Park hide their romance",
                "Nora Vance and Elias Park keep their romance hidden",
                "A fisherman crushes his hand on a trawler winch",
            ]),
        )
        .unwrap();
        let close = cosine_similarity(&v[0], &v[1]).unwrap();
        let far = cosine_similarity(&v[0], &v[2]).unwrap();
        assert!(close > 0.6, "{close}");
        assert!(far < 0.3, "{far}");
    }

    #[test]
    fn short_text_still_has_direction() {
        let e = HashedNgramEmbedder::new(8);
        let v = embed_texts(&e, &texts(&["!"])).unwrap();
        assert!((l2_norm(&v[0]) - 1.0).abs() < 1e-6);
    }
}
