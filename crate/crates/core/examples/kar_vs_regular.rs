//! Answer the same questions through keyword matching and through
//! embedding similarity, counting provider calls on each path.

use std::sync::Arc;
use std::time::Duration;

use kar::baseline::build_store;
use kar::embed::MockEmbedder;
use kar::generation::llm::{MockBehavior, MockCompletion};
use kar::index::{build_index, RetrievalMode};
use kar::ingest::{chunk_document, parse_document, ChunkStore, SourceFormat};
use kar::keywords::{ExtractorConfig, KeywordExtractor};
use kar::pipeline::Pipeline;
use kar::provider::Counted;

const DOC: &str = include_str!("../tests/fixtures/keyphrase_methods.md");
const QUERIES: &str = include_str!("../tests/fixtures/queries.txt");

fn main() -> kar::Result<()> {
    let chunks = chunk_document(&parse_document("methods", DOC.as_bytes(), SourceFormat::Markdown)?, 128)?;
    let keyword_model = Arc::new(Counted::new(MockEmbedder::new(64).with_latency(Duration::from_millis(20))));
    let embedder = Arc::new(Counted::new(MockEmbedder::new(64).with_latency(Duration::from_millis(150))));
    let llm = Arc::new(Counted::new(
        MockCompletion::new(MockBehavior::Extractive).with_latency(Duration::from_millis(100)),
    ));

    let extractor = KeywordExtractor::new(ExtractorConfig::default(), keyword_model.clone());
    let index = build_index(&chunks, &extractor, 128)?;
    let store = build_store(&chunks, embedder.as_ref())?;
    let pipeline = Pipeline::new(Arc::new(ChunkStore::new(chunks)?), extractor, embedder.clone(), llm.clone())
        .with_index(Arc::new(index))
        .with_store(Arc::new(store));

    for query in QUERIES.lines() {
        println!("{query}");
        for mode in [RetrievalMode::Kar, RetrievalMode::Regular] {
            keyword_model.reset();
            embedder.reset();
            llm.reset();
            let record = pipeline.answer(query, mode)?;
            println!(
                "  {mode:<8} {:.3}s  chunks {:?}  embedder {} keyword model {} llm {}",
                record.timings.total.as_secs_f64(),
                record.context_chunk_ids.iter().map(ToString::to_string).collect::<Vec<_>>(),
                embedder.calls(),
                keyword_model.calls(),
                llm.calls(),
            );
        }
    }
    Ok(())
}
