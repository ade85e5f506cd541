//! Embedding providers.
//!
//! The mock embedder is fully specified so its vectors can be reproduced in
//! any language:
//!
//! 1. Lowercase the text and take every maximal run of alphanumeric
//!    characters as a token. If there are none, use the single empty token.
//! 2. For each token `t`, let `h = fnv1a64(utf8(t)) XOR seed` (FNV-1a, 64-bit,
//!    offset basis `0xcbf29ce484222325`, prime `0x100000001b3`).
//! 3. Component `i` of the token vector is
//!    `u(splitmix64(h XOR (i * 0x9E3779B97F4A7C15)))`, where `u(z)` maps the
//!    top 53 bits of `z` to `[-1, 1)`: `(z >> 11) / 2^53 * 2 - 1`.
//! 4. The text vector is the sum of its token vectors (a bag of words; no
//!    normalization).

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::provider::{http_client, map_status, map_transport, Counted, ProviderSpec};

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in index and store files.
    fn id(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed_batch(texts)
    }
}

impl<E: Embedder> Embedder for Counted<E> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.record(1);
        self.inner.embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.record(texts.len());
        self.inner.embed_batch(texts)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(z: u64) -> f64 {
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Deterministic hashing embedder for tests and offline demos.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    seed: u64,
    latency: Duration,
    fail: bool,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "mock embedder dimension must be at least 2");
        Self {
            dimension,
            seed: 0,
            latency: Duration::ZERO,
            fail: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sleeps this long on every call (per request, so a batch pays it once).
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Every call fails with [`ProviderError::Unavailable`].
    pub fn failing(mut self) -> Self {
        self.fail = true;
        self
    }

    fn vector(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push("");
        }
        let mut v = vec![0.0; self.dimension];
        for token in tokens {
            let h = fnv1a64(token.as_bytes()) ^ self.seed;
            for (i, slot) in v.iter_mut().enumerate() {
                *slot += unit(splitmix64(h ^ (i as u64).wrapping_mul(GOLDEN)));
            }
        }
        v
    }

    fn call(&self) -> Result<(), ProviderError> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if self.fail {
            return Err(ProviderError::Unavailable("mock embedder configured to fail".into()));
        }
        Ok(())
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> String {
        if self.seed == 0 {
            format!("mock:{}", self.dimension)
        } else {
            format!("mock:{}?seed={}", self.dimension, self.seed)
        }
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.call()?;
        Ok(self.vector(text))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.call()?;
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedder: `POST {"texts": [...]}` returning `{"vectors": [[...]]}`.
#[derive(Debug)]
pub struct HttpEmbedder {
    url: String,
    timeout: Duration,
    dimension: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
            dimension: OnceLock::new(),
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let client = http_client(self.timeout)?;
        let response = client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| map_transport(e, self.timeout))?;
        let status = response.status();
        let body = response.text().map_err(|e| map_transport(e, self.timeout))?;
        if !status.is_success() {
            return Err(map_status(status, &body));
        }
        let parsed: EmbedResponse = serde_json::from_str(&body)
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        let dim = *self.dimension.get_or_init(|| parsed.vectors[0].len());
        if parsed.vectors.iter().any(|v| v.len() != dim) {
            return Err(ProviderError::InvalidResponse("inconsistent vector dimensions".into()));
        }
        Ok(parsed.vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        self.url.clone()
    }

    /// Zero until the first successful response.
    fn dimension(&self) -> usize {
        self.dimension.get().copied().unwrap_or(0)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.request(texts)
    }
}

/// Builds an embedder from `mock:<dimension>[?seed=N&latency_ms=N&fail=1]` or an HTTP URL.
pub fn embedder_from_spec(spec: &str, timeout: Duration) -> Result<Arc<dyn Embedder>> {
    let parsed: ProviderSpec = spec.parse()?;
    match &parsed {
        ProviderSpec::Mock { arg, .. } => {
            let dimension: usize = arg
                .parse()
                .ok()
                .filter(|d| *d >= 2)
                .ok_or_else(|| Error::Config(format!("mock embedder needs a dimension >= 2: {spec:?}")))?;
            let mut embedder = MockEmbedder::new(dimension)
                .with_seed(parsed.param("seed")?.unwrap_or(0))
                .with_latency(parsed.latency()?);
            if parsed.param::<u8>("fail")?.unwrap_or(0) != 0 {
                embedder = embedder.failing();
            }
            Ok(Arc::new(embedder))
        }
        ProviderSpec::Http { url } => Ok(Arc::new(HttpEmbedder::new(url.clone(), timeout))),
    }
}

/// Cosine similarity where a zero vector is simply dissimilar to everything.
pub(crate) fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic() {
        let e = MockEmbedder::new(8);
        assert_eq!(e.embed("x").unwrap(), e.embed("x").unwrap());
        assert_ne!(e.embed("x").unwrap(), e.embed("y").unwrap());
        let v = e.embed("x").unwrap();
        assert!((cosine_or_zero(&v, &v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mock_is_a_bag_of_lowercased_words() {
        let e = MockEmbedder::new(16);
        assert_eq!(e.embed("Page Rank").unwrap(), e.embed("rank, page!").unwrap());
        let sum: Vec<f64> = e
            .embed("page")
            .unwrap()
            .iter()
            .zip(e.embed("rank").unwrap())
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(e.embed("page rank").unwrap(), sum);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = MockEmbedder::new(8).embed("x").unwrap();
        let b = MockEmbedder::new(8).with_seed(1).embed("x").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn spec_parsing() {
        let e = embedder_from_spec("mock:32?seed=3", Duration::from_secs(1)).unwrap();
        assert_eq!(e.dimension(), 32);
        assert_eq!(e.id(), "mock:32?seed=3");
        assert!(embedder_from_spec("mock:1", Duration::from_secs(1)).is_err());
        assert!(embedder_from_spec("mock:x", Duration::from_secs(1)).is_err());
        let failing = embedder_from_spec("mock:4?fail=1", Duration::from_secs(1)).unwrap();
        assert!(failing.embed("x").is_err());
    }

    #[test]
    fn counted_counts_texts() {
        let e = Counted::new(MockEmbedder::new(4));
        e.embed("a").unwrap();
        e.embed_batch(&["b", "c"]).unwrap();
        assert_eq!(e.calls(), 3);
    }
}
