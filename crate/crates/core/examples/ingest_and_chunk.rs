//! Parse a markdown or plaintext file into heading-scoped chunks.
//!
//! cargo run --example ingest_and_chunk -- [FILE] [BUDGET]

use kar::ingest::{chunk_document, parse_document, SourceFormat};

fn main() -> kar::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/keyphrase_methods.md").into());
    let budget = args.next().map_or(64, |b| b.parse().expect("budget is a number"));
    let raw = std::fs::read(&path).map_err(|e| kar::Error::io(&path, e))?;
    let format = if path.ends_with(".txt") { SourceFormat::Plaintext } else { SourceFormat::Markdown };

    let doc = parse_document("example", &raw, format)?;
    println!("{} sections in {path}", doc.sections.len());
    for chunk in chunk_document(&doc, budget)? {
        let preview: String = chunk.text.chars().take(60).collect();
        println!(
            "{:<12} {:>3} tokens  {:<40} {preview}",
            chunk.chunk_id.to_string(),
            chunk.token_count,
            chunk.heading_path.join(" > ")
        );
    }
    Ok(())
}
