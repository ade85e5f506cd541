//! Run both arms over a query set with simulated provider latency and
//! print the markdown report.

use std::sync::Arc;
use std::time::Duration;

use kar::baseline::build_store;
use kar::bench::{emit_report, parse_queries, run_benchmark, BenchConfig, ReportFormat, Rubric};
use kar::embed::MockEmbedder;
use kar::generation::llm::{MockBehavior, MockCompletion};
use kar::index::build_index;
use kar::ingest::{chunk_document, parse_document, ChunkStore, SourceFormat};
use kar::keywords::{ExtractorConfig, KeywordExtractor};
use kar::pipeline::Pipeline;

const DOC: &str = include_str!("../tests/fixtures/keyphrase_methods.md");
const QUERIES: &str = include_str!("../tests/fixtures/queries.txt");
const RUBRIC: &str = include_str!("../tests/fixtures/rubric.json");

fn main() -> kar::Result<()> {
    let chunks = chunk_document(&parse_document("methods", DOC.as_bytes(), SourceFormat::Markdown)?, 128)?;
    let extractor = KeywordExtractor::new(
        ExtractorConfig::default(),
        Arc::new(MockEmbedder::new(64).with_latency(Duration::from_millis(30))),
    );
    let embedder = Arc::new(MockEmbedder::new(64).with_latency(Duration::from_millis(120)));
    let index = build_index(&chunks, &extractor, 128)?;
    let store = build_store(&chunks, embedder.as_ref())?;
    let llm = Arc::new(MockCompletion::new(MockBehavior::Extractive).with_latency(Duration::from_millis(80)));
    let pipeline = Pipeline::new(Arc::new(ChunkStore::new(chunks)?), extractor, embedder, llm)
        .with_index(Arc::new(index))
        .with_store(Arc::new(store));

    let rubric = Rubric::from_json(RUBRIC)?;
    let rows = run_benchmark(&parse_queries(QUERIES), &pipeline, Some(&rubric), None, &BenchConfig::default());
    print!("{}", String::from_utf8_lossy(&emit_report(&rows, ReportFormat::Markdown)));
    Ok(())
}
