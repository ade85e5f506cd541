//! Start the HTTP service on a free port, ingest a document and ask one
//! question over the JSON API.
//!
//! cargo run --example serve -- [--forever]

use std::sync::Arc;

use kar::service::{router, AppState, ServiceConfig};

const DOC: &str = include_str!("../tests/fixtures/keyphrase_methods.md");

#[tokio::main]
async fn main() -> kar::Result<()> {
    let dir = std::env::temp_dir().join(format!("kar-serve-example-{}", std::process::id()));
    let config = ServiceConfig {
        corpus_dir: dir.clone(),
        ..Default::default()
    };
    let state = Arc::new(AppState::open(config)?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| kar::Error::io(&dir, e))?;
    let base = format!("http://{}", listener.local_addr().map_err(|e| kar::Error::io(&dir, e))?);
    let server = tokio::spawn(async move { axum::serve(listener, router(state)).await });
    println!("listening on {base}");

    let client = reqwest::Client::new();
    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(DOC.as_bytes().to_vec()).file_name("methods.md"));
    let ingested: serde_json::Value = client
        .post(format!("{base}/api/ingest"))
        .multipart(form)
        .send()
        .await
        .and_then(|r| r.error_for_status())
        .expect("ingest")
        .json()
        .await
        .expect("ingest body");
    println!("ingested {ingested}");

    let answer: serde_json::Value = client
        .post(format!("{base}/api/query"))
        .json(&serde_json::json!({ "query": "what is textrank", "mode": "kar" }))
        .send()
        .await
        .expect("query")
        .json()
        .await
        .expect("query body");
    println!("{}", serde_json::to_string_pretty(&answer).expect("json"));

    if std::env::args().any(|a| a == "--forever") {
        let _ = server.await;
    }
    let _ = std::fs::remove_dir_all(dir);
    Ok(())
}
