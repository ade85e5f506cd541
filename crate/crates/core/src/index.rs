//! The keyword index: per-chunk keyword sets plus the inverted
//! phrase-to-chunk map, and keyword-overlap context identification.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChunkId, SubDocument};
use crate::keywords::{KeywordExtractor, KeywordSet};

pub const INDEX_FORMAT_VERSION: u64 = 1;
pub const DEFAULT_TOP_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMeta {
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub k: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub diversity: f64,
    pub embedder_id: String,
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Kar,
    Regular,
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kar" => Ok(RetrievalMode::Kar),
            "regular" => Ok(RetrievalMode::Regular),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            RetrievalMode::Kar => "kar",
            RetrievalMode::Regular => "regular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// Number of shared phrases.
    #[default]
    Overlap,
    /// Sum of the chunk-side weights of shared phrases.
    WeightedOverlap,
    /// Shared phrases over the union of both sets.
    Jaccard,
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap" => Ok(Scoring::Overlap),
            "weighted-overlap" | "weighted" => Ok(Scoring::WeightedOverlap),
            "jaccard" => Ok(Scoring::Jaccard),
            other => Err(Error::InvalidArgument(format!("unknown scoring {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub score: f64,
}

/// Ranked chunks from either retrieval path, best first, ties by chunk id.
///
/// Keyword scores are always positive. Regular-mode scores are raw cosine
/// similarities and may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub mode: RetrievalMode,
    pub ranked: Vec<ScoredChunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_keywords: Option<KeywordSet>,
    #[serde(with = "crate::duration_secs")]
    pub elapsed: Duration,
}

impl RetrievalResult {
    pub fn chunk_ids(&self) -> Vec<ChunkId> {
        self.ranked.iter().map(|s| s.chunk_id.clone()).collect()
    }
}

/// Sorts by descending score, then ascending chunk id, and truncates.
pub(crate) fn rank(mut scored: Vec<ScoredChunk>, top_k: usize) -> Vec<ScoredChunk> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    scored.truncate(top_k);
    scored
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordIndex {
    entries: BTreeMap<ChunkId, KeywordSet>,
    inverted: BTreeMap<String, BTreeSet<ChunkId>>,
    chunk_meta: BTreeMap<ChunkId, ChunkMeta>,
    build_config: BuildConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub chunks: usize,
    pub distinct_keywords: usize,
    /// Rounded to two decimals.
    pub mean_keywords_per_chunk: f64,
}

impl KeywordIndex {
    pub fn empty(build_config: BuildConfig) -> Self {
        Self {
            entries: BTreeMap::new(),
            inverted: BTreeMap::new(),
            chunk_meta: BTreeMap::new(),
            build_config,
        }
    }

    /// Assembles an index from precomputed keyword sets, deriving the inverted map.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (ChunkId, ChunkMeta, KeywordSet)>,
        build_config: BuildConfig,
    ) -> Result<Self> {
        let mut index = Self::empty(build_config);
        for (id, meta, set) in entries {
            index.insert(id, meta, set)?;
        }
        Ok(index)
    }

    fn insert(&mut self, id: ChunkId, meta: ChunkMeta, set: KeywordSet) -> Result<()> {
        if self.entries.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate chunk id {id}")));
        }
        for phrase in set.phrases() {
            self.inverted.entry(phrase.to_string()).or_default().insert(id.clone());
        }
        self.chunk_meta.insert(id.clone(), meta);
        self.entries.insert(id, set);
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<ChunkId, KeywordSet> {
        &self.entries
    }

    pub fn inverted(&self) -> &BTreeMap<String, BTreeSet<ChunkId>> {
        &self.inverted
    }

    pub fn chunk_meta(&self) -> &BTreeMap<ChunkId, ChunkMeta> {
        &self.chunk_meta
    }

    pub fn build_config(&self) -> &BuildConfig {
        &self.build_config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns a new index containing the entries of both. Chunk ids must not collide.
    pub fn merged(&self, other: &KeywordIndex) -> Result<KeywordIndex> {
        let mut out = self.clone();
        for (id, set) in &other.entries {
            out.insert(id.clone(), other.chunk_meta[id].clone(), set.clone())?;
        }
        Ok(out)
    }

    /// Checks the transpose law and metadata coverage.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |message: String| Error::Corrupt {
            what: "keyword index".into(),
            message,
        };
        let mut expected: BTreeMap<&str, BTreeSet<&ChunkId>> = BTreeMap::new();
        for (id, set) in &self.entries {
            if !self.chunk_meta.contains_key(id) {
                return Err(corrupt(format!("chunk {id} has no metadata")));
            }
            if !set.is_well_formed() {
                return Err(corrupt(format!("keyword set of chunk {id} is not normalized")));
            }
            for phrase in set.phrases() {
                expected.entry(phrase).or_default().insert(id);
            }
        }
        let actual: BTreeMap<&str, BTreeSet<&ChunkId>> = self
            .inverted
            .iter()
            .map(|(p, ids)| (p.as_str(), ids.iter().collect()))
            .collect();
        if expected != actual {
            return Err(corrupt("inverted map is not the transpose of entries".into()));
        }
        Ok(())
    }

    pub fn stats(&self) -> IndexStats {
        index_stats(self)
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

    pub fn to_json(&self) -> String {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            build_config: self.build_config.clone(),
            entries: self.entries.clone(),
            inverted: self.inverted.clone(),
            chunk_meta: self.chunk_meta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        check_version(text, "keyword index")?;
        let file: IndexFile = serde_json::from_str(text).map_err(|e| Error::json("keyword index", text, &e))?;
        let index = KeywordIndex {
            entries: file.entries,
            inverted: file.inverted,
            chunk_meta: file.chunk_meta,
            build_config: file.build_config,
        };
        index.validate()?;
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u64,
    build_config: BuildConfig,
    entries: BTreeMap<ChunkId, KeywordSet>,
    inverted: BTreeMap<String, BTreeSet<ChunkId>>,
    chunk_meta: BTreeMap<ChunkId, ChunkMeta>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

/// Rejects anything but `format_version: 1` before the full parse.
pub(crate) fn check_version(text: &str, what: &str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::json(what, text, &e))?;
    match probe.format_version {
        Some(INDEX_FORMAT_VERSION) => Ok(()),
        Some(v) => Err(Error::UnsupportedVersion(v)),
        None => Err(Error::Corrupt {
            what: what.into(),
            message: "missing format_version".into(),
        }),
    }
}

/// Extracts keywords for every chunk (headings included) and builds the index.
pub fn build_index(chunks: &[SubDocument], extractor: &KeywordExtractor, budget: usize) -> Result<KeywordIndex> {
    let config = extractor.config();
    let build_config = BuildConfig {
        k: config.chunk_keywords,
        ngram_min: config.ngram_min,
        ngram_max: config.ngram_max,
        diversity: config.diversity,
        embedder_id: extractor.embedder().id(),
        budget,
    };
    let mut seen = HashSet::new();
    if let Some(dup) = chunks.iter().find(|c| !seen.insert(&c.chunk_id)) {
        return Err(Error::InvalidArgument(format!("duplicate chunk id {}", dup.chunk_id)));
    }
    let mut index = KeywordIndex::empty(build_config);
    for chunk in chunks {
        let set = extractor
            .extract_chunk(&chunk.text, &chunk.heading_path)
            .map_err(|e| Error::Chunk {
                chunk_id: chunk.chunk_id.to_string(),
                source: Box::new(e),
            })?;
        let meta = ChunkMeta {
            doc_id: chunk.doc_id.clone(),
            heading_path: chunk.heading_path.clone(),
            token_count: chunk.token_count,
        };
        index.insert(chunk.chunk_id.clone(), meta, set)?;
    }
    Ok(index)
}

/// Keyword-comparison context identification. Never calls a provider.
pub fn match_query(
    index: &KeywordIndex,
    query_keywords: &KeywordSet,
    top_k: usize,
    scoring: Scoring,
) -> Result<RetrievalResult> {
    let started = Instant::now();
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    if query_keywords.is_empty() {
        return Err(Error::NoQueryKeywords);
    }
    let query: BTreeSet<&str> = query_keywords.phrases().collect();

    let mut shared: BTreeMap<&ChunkId, Vec<&str>> = BTreeMap::new();
    for phrase in &query {
        for id in index.inverted.get(*phrase).into_iter().flatten() {
            shared.entry(id).or_default().push(phrase);
        }
    }

    let scored = shared
        .into_iter()
        .map(|(id, phrases)| {
            let chunk = &index.entries[id];
            let hits = phrases.len() as f64;
            let score = match scoring {
                Scoring::Overlap => hits,
                Scoring::WeightedOverlap => phrases.iter().filter_map(|p| chunk.weight(p)).sum(),
                Scoring::Jaccard => hits / (query.len() + chunk.len() - phrases.len()) as f64,
            };
            ScoredChunk {
                chunk_id: id.clone(),
                score,
            }
        })
        .filter(|s| s.score > 0.0)
        .collect();

    Ok(RetrievalResult {
        mode: RetrievalMode::Kar,
        ranked: rank(scored, top_k),
        query_keywords: Some(query_keywords.clone()),
        elapsed: started.elapsed(),
    })
}

pub fn index_stats(index: &KeywordIndex) -> IndexStats {
    let chunks = index.entries.len();
    let total: usize = index.entries.values().map(KeywordSet::len).sum();
    let mean = if chunks == 0 {
        0.0
    } else {
        (total as f64 / chunks as f64 * 100.0).round() / 100.0
    };
    IndexStats {
        chunks,
        distinct_keywords: index.inverted.len(),
        mean_keywords_per_chunk: mean,
    }
}
