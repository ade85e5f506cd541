//! The "regular" retrieval arm: embed every chunk once, embed the query, rank
//! by cosine similarity with an exact linear scan.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{Error, Result, Stage};
use crate::index::{check_version, rank, RetrievalMode, RetrievalResult, ScoredChunk, INDEX_FORMAT_VERSION};
use crate::ingest::{ChunkId, SubDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    vectors: BTreeMap<ChunkId, Vec<f64>>,
    dimension: usize,
    embedder_id: String,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    format_version: u64,
    dimension: usize,
    #[serde(default)]
    embedder_id: String,
    vectors: BTreeMap<ChunkId, Vec<f64>>,
}

impl VectorStore {
    pub fn new(dimension: usize, embedder_id: impl Into<String>) -> Self {
        Self {
            vectors: BTreeMap::new(),
            dimension,
            embedder_id: embedder_id.into(),
        }
    }

    pub fn insert(&mut self, id: ChunkId, vector: Vec<f64>) -> Result<()> {
        if self.vectors.is_empty() && self.dimension == 0 {
            self.dimension = vector.len();
        }
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                left: self.dimension,
                right: vector.len(),
            });
        }
        if self.vectors.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate chunk id {id}")));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn vectors(&self) -> &BTreeMap<ChunkId, Vec<f64>> {
        &self.vectors
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn merged(&self, other: &VectorStore) -> Result<VectorStore> {
        let mut out = self.clone();
        for (id, v) in &other.vectors {
            out.insert(id.clone(), v.clone())?;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&StoreFile {
            format_version: INDEX_FORMAT_VERSION,
            dimension: self.dimension,
            embedder_id: self.embedder_id.clone(),
            vectors: self.vectors.clone(),
        })
        .expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        check_version(text, "vector store")?;
        let file: StoreFile = serde_json::from_str(text).map_err(|e| Error::json("vector store", text, &e))?;
        let mut store = VectorStore::new(file.dimension, file.embedder_id);
        for (id, v) in file.vectors {
            store.insert(id, v).map_err(|e| Error::Corrupt {
                what: "vector store".into(),
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Embeds every chunk's text, one provider call per chunk.
pub fn build_store(chunks: &[SubDocument], embedder: &dyn Embedder) -> Result<VectorStore> {
    let mut seen = HashSet::new();
    if let Some(dup) = chunks.iter().find(|c| !seen.insert(&c.chunk_id)) {
        return Err(Error::InvalidArgument(format!("duplicate chunk id {}", dup.chunk_id)));
    }
    let mut store = VectorStore::new(embedder.dimension(), embedder.id());
    for chunk in chunks {
        let fail = |e: Error| Error::Chunk {
            chunk_id: chunk.chunk_id.to_string(),
            source: Box::new(e),
        };
        let v = embedder
            .embed(&chunk.text)
            .map_err(|e| fail(Error::provider(Stage::ChunkEmbedding, e)))?;
        store.insert(chunk.chunk_id.clone(), v).map_err(fail)?;
    }
    Ok(store)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Ranks stored chunks against the query by cosine similarity. Makes exactly
/// one embedding call (the query). Zero-norm stored vectors are skipped.
pub fn regular_retrieve(
    store: &VectorStore,
    query: &str,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<RetrievalResult> {
    let started = Instant::now();
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let q = embedder
        .embed(query)
        .map_err(|e| Error::provider(Stage::QueryEmbedding, e))?;
    let mut scored = Vec::with_capacity(store.len());
    for (id, v) in &store.vectors {
        match cosine(&q, v) {
            Ok(score) => scored.push(ScoredChunk {
                chunk_id: id.clone(),
                score,
            }),
            Err(Error::ZeroNorm) if q.iter().any(|x| *x != 0.0) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(RetrievalResult {
        mode: RetrievalMode::Regular,
        ranked: rank(scored, top_k),
        query_keywords: None,
        elapsed: started.elapsed(),
    })
}
