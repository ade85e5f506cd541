#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use kar::embed::{Embedder, MockEmbedder};
use kar::generation::llm::{MockBehavior, MockCompletion};
use kar::index::build_index;
use kar::ingest::{chunk_document, parse_document, ChunkStore, SourceFormat, SubDocument};
use kar::keywords::{ExtractorConfig, KeywordExtractor};
use kar::pipeline::Pipeline;
use kar::baseline::build_store;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Small deterministic generator for randomized fixtures.
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `lo..hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo) as u64) as usize
    }

    /// Uniform in `[-1, 1)`.
    pub fn signed(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.range(0, items.len())]
    }
}

pub const VOCAB: &[&str] = &[
    "graph", "ranking", "keyword", "phrase", "document", "random", "walk", "position", "neighbor", "corpus",
    "vector", "embedding", "context", "query", "answer", "model", "score", "window", "edge", "node", "weight",
    "summary", "extraction", "candidate", "frequency", "pagerank", "textrank", "expandrank", "positionrank",
    "token", "budget", "section", "heading", "retrieval", "latency", "speech",
];

pub fn random_sentence(rng: &mut SplitMix, words: usize) -> String {
    let mut s: Vec<&str> = (0..words).map(|_| *rng.pick(VOCAB)).collect();
    let last = s.len() - 1;
    let end = format!("{}.", s[last]);
    s[last] = &end;
    s.join(" ")
}

pub fn chunks_of(markdown: &str, doc_id: &str, budget: usize) -> Vec<SubDocument> {
    let doc = parse_document(doc_id, markdown.as_bytes(), SourceFormat::Markdown).unwrap();
    chunk_document(&doc, budget).unwrap()
}

pub fn extractor(dim: usize) -> KeywordExtractor {
    KeywordExtractor::new(ExtractorConfig::default(), Arc::new(MockEmbedder::new(dim)))
}

/// Pipeline over `chunks` with the given providers, index and store built.
pub fn pipeline_with(
    chunks: Vec<SubDocument>,
    keyword_model: Arc<dyn Embedder>,
    embedder: Arc<dyn Embedder>,
    llm: Arc<dyn kar::generation::llm::CompletionProvider>,
) -> Pipeline {
    let extractor = KeywordExtractor::new(ExtractorConfig::default(), keyword_model);
    let index = build_index(&chunks, &extractor, 512).unwrap();
    let store = build_store(&chunks, embedder.as_ref()).unwrap();
    Pipeline::new(Arc::new(ChunkStore::new(chunks).unwrap()), extractor, embedder, llm)
        .with_index(Arc::new(index))
        .with_store(Arc::new(store))
}

pub fn mock_pipeline(markdown: &str) -> Pipeline {
    pipeline_with(
        chunks_of(markdown, "doc", 128),
        Arc::new(MockEmbedder::new(32)),
        Arc::new(MockEmbedder::new(32)),
        Arc::new(MockCompletion::new(MockBehavior::Extractive)),
    )
}
