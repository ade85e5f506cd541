//! Build a keyword index, inspect per-chunk keywords and look phrases up.
//!
//! cargo run --example keyword_index -- [PHRASE...]

use std::sync::Arc;

use kar::embed::MockEmbedder;
use kar::index::{build_index, match_query, Scoring};
use kar::ingest::{chunk_document, parse_document, SourceFormat};
use kar::keywords::{ExtractorConfig, KeywordExtractor, KeywordOrigin, KeywordSet};

const DOC: &str = include_str!("../tests/fixtures/keyphrase_methods.md");

fn main() -> kar::Result<()> {
    let doc = parse_document("methods", DOC.as_bytes(), SourceFormat::Markdown)?;
    let chunks = chunk_document(&doc, 128)?;
    let extractor = KeywordExtractor::new(ExtractorConfig::default(), Arc::new(MockEmbedder::new(64)));
    let index = build_index(&chunks, &extractor, 128)?;

    let stats = index.stats();
    println!(
        "{} chunks, {} distinct keywords, {:.2} per chunk\n",
        stats.chunks, stats.distinct_keywords, stats.mean_keywords_per_chunk
    );
    for (id, set) in index.entries().iter().take(3) {
        let top: Vec<String> = set.keywords().iter().take(6).map(|k| format!("{} ({:.2})", k.phrase, k.weight)).collect();
        println!("{id}: {}", top.join(", "));
    }

    let phrases: Vec<String> = std::env::args().skip(1).collect();
    let phrases = if phrases.is_empty() { vec!["pagerank".into(), "page rank".into()] } else { phrases };
    println!();
    for phrase in phrases {
        let query = KeywordSet::from_phrases([phrase.as_str()], KeywordOrigin::Query);
        let hits = match_query(&index, &query, 3, Scoring::Overlap)?;
        println!("{phrase:?} -> {:?}", hits.chunk_ids().iter().map(ToString::to_string).collect::<Vec<_>>());
    }
    Ok(())
}
