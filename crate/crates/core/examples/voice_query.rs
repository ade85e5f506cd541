//! Spoken question in, spoken answer out, with per-stage timings.

use std::sync::Arc;
use std::time::Duration;

use kar::embed::MockEmbedder;
use kar::generation::llm::{MockBehavior, MockCompletion};
use kar::index::{build_index, RetrievalMode};
use kar::baseline::build_store;
use kar::ingest::{chunk_document, parse_document, ChunkStore, SourceFormat};
use kar::keywords::{ExtractorConfig, KeywordExtractor};
use kar::pipeline::Pipeline;
use kar::speech::{voice_query, AudioBlob, MockStt, MockTts};

const DOC: &str = include_str!("../tests/fixtures/keyphrase_methods.md");

fn main() -> kar::Result<()> {
    let chunks = chunk_document(&parse_document("methods", DOC.as_bytes(), SourceFormat::Markdown)?, 128)?;
    let extractor = KeywordExtractor::new(ExtractorConfig::default(), Arc::new(MockEmbedder::new(64)));
    let embedder = Arc::new(MockEmbedder::new(64));
    let index = build_index(&chunks, &extractor, 128)?;
    let store = build_store(&chunks, embedder.as_ref())?;
    let llm = Arc::new(MockCompletion::new(MockBehavior::Extractive).with_latency(Duration::from_millis(300)));
    let pipeline = Pipeline::new(Arc::new(ChunkStore::new(chunks)?), extractor, embedder, llm)
        .with_index(Arc::new(index))
        .with_store(Arc::new(store));

    let samples: Vec<i16> = (0..16000).map(|i| ((i as f64 * 0.05).sin() * 4000.0) as i16).collect();
    let recording = AudioBlob::wav_from_samples(&samples, 16000)?;
    let stt = MockStt::new()
        .with_fixture(recording.bytes(), "tell me important facts about expandrank")
        .with_latency(Duration::from_millis(250));
    let tts = MockTts::new().with_latency(Duration::from_millis(400));

    let voice = voice_query(&recording, RetrievalMode::Kar, &pipeline, &stt, &tts).map_err(|e| e.error)?;
    println!("heard:  {}", voice.record.query);
    println!("answer: {}", voice.record.answer);
    println!(
        "audio:  {:.2}s of {} ({} bytes)",
        voice.audio.duration().as_secs_f64(),
        voice.audio.encoding().content_type(),
        voice.audio.bytes().len()
    );
    let origin = voice.events[0].started;
    for e in &voice.events {
        println!(
            "  {:<10} {:>6.3}s .. {:>6.3}s",
            format!("{:?}", e.stage),
            (e.started - origin).as_secs_f64(),
            (e.finished - origin).as_secs_f64()
        );
    }
    println!("total {:.3}s", voice.total.as_secs_f64());
    Ok(())
}
