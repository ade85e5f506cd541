use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use kar::baseline::{build_store, VectorStore};
use kar::bench::{
    check_time_saved, emit_report, parse_csv_report, parse_json_report, parse_queries, run_benchmark, ArmOrder,
    BenchConfig, ReportFormat, Rubric, SpeechHarness,
};
use kar::config::ProviderConfig;
use kar::index::{build_index, KeywordIndex, RetrievalMode, Scoring, DEFAULT_TOP_K};
use kar::ingest::{chunk_document, parse_document, write_jsonl, ChunkStore, SourceFormat, DEFAULT_CHUNK_BUDGET};
use kar::keywords::ExtractorConfig;
use kar::pipeline::{Pipeline, PipelineConfig};
use kar::service::{serve, ServiceConfig};
use kar::speech::AudioBlob;
use kar::{Error, Result};

#[derive(Parser)]
#[command(name = "kar", version, about = "Keyword augmented retrieval for document question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and chunk a document into JSON lines.
    Ingest {
        file: PathBuf,
        /// Defaults to the file name without extension.
        #[arg(long)]
        doc_id: Option<String>,
        /// markdown or plaintext; defaults by extension.
        #[arg(long)]
        format: Option<SourceFormat>,
        #[arg(long, default_value_t = DEFAULT_CHUNK_BUDGET)]
        budget: usize,
        /// Append to this chunks file instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or inspect a keyword index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Build the embedding store for the regular arm.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Answer one question and print the answer record as JSON.
    Query {
        query: String,
        #[arg(long, default_value = "kar")]
        mode: RetrievalMode,
        #[command(flatten)]
        artifacts: Artifacts,
        #[command(flatten)]
        answer: AnswerArgs,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Run a query set through both arms and write a report.
    Bench {
        #[arg(long)]
        queries: PathBuf,
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long)]
        rubric: Option<PathBuf>,
        /// Report path; .md, .csv or .json selects the format.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the keyword arm before the regular one.
        #[arg(long)]
        kar_first: bool,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Directory of `<line>.wav` query recordings (1-based) for STT timing.
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        /// Also time answer readout through the TTS provider.
        #[arg(long)]
        speech: bool,
        #[command(flatten)]
        answer: AnswerArgs,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    /// Recompute the time-saved column of a CSV or JSON report and flag mismatches.
    CheckReport { report: PathBuf },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "kar.toml")]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ExtractorConfig::default().chunk_keywords)]
        keywords: usize,
        #[arg(long, default_value_t = ExtractorConfig::default().diversity)]
        diversity: f64,
        #[arg(long, default_value_t = ExtractorConfig::default().ngram_max)]
        ngram_max: usize,
        #[command(flatten)]
        providers: ProviderArgs,
    },
    Stats {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    Build {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        providers: ProviderArgs,
    },
}

#[derive(Args)]
struct Artifacts {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Defaults to chunks.jsonl beside the index or store.
    #[arg(long)]
    chunks: Option<PathBuf>,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value = "overlap")]
    scoring: Scoring,
    /// Call the model even when no chunk matches the query keywords.
    #[arg(long)]
    always_call_llm: bool,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, default_value_t = ProviderConfig::default().keyword_model)]
    keyword_model: String,
    #[arg(long, default_value_t = ProviderConfig::default().embedder)]
    embedder: String,
    #[arg(long, default_value_t = ProviderConfig::default().llm)]
    llm: String,
    #[arg(long, default_value_t = ProviderConfig::default().stt)]
    stt: String,
    #[arg(long, default_value_t = ProviderConfig::default().tts)]
    tts: String,
    /// Environment variable holding the completion API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = ProviderConfig::default().timeout_secs)]
    timeout_secs: f64,
}

impl ProviderArgs {
    fn config(&self) -> ProviderConfig {
        ProviderConfig {
            keyword_model: self.keyword_model.clone(),
            embedder: self.embedder.clone(),
            llm: self.llm.clone(),
            stt: self.stt.clone(),
            tts: self.tts.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
            ..Default::default()
        }
    }
}

impl Artifacts {
    fn chunks_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.chunks {
            return Ok(p.clone());
        }
        let beside = self.index.as_ref().or(self.store.as_ref()).ok_or_else(|| {
            Error::InvalidArgument("pass --index or --store (and optionally --chunks)".into())
        })?;
        Ok(beside.with_file_name("chunks.jsonl"))
    }
}

fn format_for(path: &Path) -> SourceFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt") => SourceFormat::Plaintext,
        _ => SourceFormat::Markdown,
    }
}

fn build_pipeline(artifacts: &Artifacts, answer: &AnswerArgs, providers: &ProviderArgs) -> Result<Pipeline> {
    let providers = providers.config().build()?;
    let chunks = ChunkStore::load(artifacts.chunks_path()?)?;
    let mut pipeline = Pipeline::new(
        Arc::new(chunks),
        providers.extractor(ExtractorConfig::default()),
        providers.embedder.clone(),
        providers.llm.clone(),
    )
    .with_config(PipelineConfig {
        top_k: answer.top_k,
        scoring: answer.scoring,
        always_call_llm: answer.always_call_llm,
        ..Default::default()
    });
    if let Some(p) = &artifacts.index {
        let index = KeywordIndex::load(p)?;
        let config = ExtractorConfig {
            chunk_keywords: index.build_config().k,
            ngram_min: index.build_config().ngram_min,
            ngram_max: index.build_config().ngram_max,
            diversity: index.build_config().diversity,
            ..Default::default()
        };
        pipeline = Pipeline::new(
            pipeline.chunks().clone(),
            providers.extractor(config),
            providers.embedder.clone(),
            providers.llm.clone(),
        )
        .with_config(pipeline.config().clone())
        .with_index(Arc::new(index));
    }
    if let Some(p) = &artifacts.store {
        pipeline = pipeline.with_store(Arc::new(VectorStore::load(p)?));
    }
    Ok(pipeline)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(std::io::stdout(), "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            file,
            doc_id,
            format,
            budget,
            out,
        } => {
            let raw = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let doc_id = doc_id
                .or_else(|| file.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .ok_or_else(|| Error::InvalidArgument("cannot derive a document id; pass --doc-id".into()))?;
            let doc = parse_document(&doc_id, &raw, format.unwrap_or_else(|| format_for(&file)))?;
            let chunks = chunk_document(&doc, budget)?;
            match out {
                Some(out) => {
                    let mut store = if out.exists() { ChunkStore::load(&out)? } else { ChunkStore::default() };
                    if store.contains_doc(&doc_id) {
                        return Err(Error::DuplicateDocument(doc_id));
                    }
                    store.extend(chunks.iter().cloned())?;
                    store.save(&out)?;
                }
                None => write_jsonl(&mut std::io::stdout().lock(), &chunks).map_err(|e| Error::io("<stdout>", e))?,
            }
            eprintln!("{doc_id}: {} chunks", chunks.len());
        }
        Command::Index {
            command:
                IndexCommand::Build {
                    chunks,
                    out,
                    keywords,
                    diversity,
                    ngram_max,
                    providers,
                },
        } => {
            let providers = providers.config().build()?;
            let store = ChunkStore::load(&chunks)?;
            let budget = store.iter().map(|c| c.token_count).max().unwrap_or(0).max(DEFAULT_CHUNK_BUDGET);
            let extractor = providers.extractor(ExtractorConfig {
                chunk_keywords: keywords,
                diversity,
                ngram_max,
                ..Default::default()
            });
            let index = build_index(&store.to_vec(), &extractor, budget)?;
            index.save(&out)?;
            print_json(&index.stats())?;
        }
        Command::Index {
            command: IndexCommand::Stats { index },
        } => print_json(&KeywordIndex::load(index)?.stats())?,
        Command::Store {
            command: StoreCommand::Build { chunks, out, providers },
        } => {
            let providers = providers.config().build()?;
            let store = build_store(&ChunkStore::load(&chunks)?.to_vec(), providers.embedder.as_ref())?;
            store.save(&out)?;
            eprintln!("{} vectors of dimension {}", store.len(), store.dimension());
        }
        Command::Query {
            query,
            mode,
            artifacts,
            answer,
            providers,
        } => {
            let pipeline = build_pipeline(&artifacts, &answer, &providers)?;
            print_json(&pipeline.answer(&query, mode)?)?;
        }
        Command::Bench {
            queries,
            artifacts,
            rubric,
            out,
            kar_first,
            parallel,
            audio_dir,
            speech,
            answer,
            providers,
        } => {
            if artifacts.index.is_none() || artifacts.store.is_none() {
                return Err(Error::InvalidArgument("bench needs both --index and --store".into()));
            }
            let text = std::fs::read_to_string(&queries).map_err(|e| Error::io(&queries, e))?;
            let queries = parse_queries(&text);
            let rubric = rubric.map(Rubric::load).transpose()?;
            let built = providers.config().build()?;
            let pipeline = build_pipeline(&artifacts, &answer, &providers)?;
            let audio = match &audio_dir {
                Some(dir) => (1..=queries.len())
                    .map(|n| {
                        let p = dir.join(format!("{n}.wav"));
                        p.exists().then(|| AudioBlob::read_wav(&p)).transpose()
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let harness = (speech || audio_dir.is_some()).then(|| SpeechHarness {
                stt: built.stt.as_ref(),
                tts: built.tts.as_ref(),
                audio,
            });
            let config = BenchConfig {
                order: if kar_first { ArmOrder::KarFirst } else { ArmOrder::RegularFirst },
                parallel,
            };
            let rows = run_benchmark(&queries, &pipeline, rubric.as_ref(), harness.as_ref(), &config);
            for row in rows.iter().filter(|r| r.is_failed()) {
                for f in &row.failures {
                    eprintln!("warning: {:?} ({}) failed: {}", row.query, f.mode, f.message);
                }
            }
            match out {
                Some(out) => {
                    let bytes = emit_report(&rows, ReportFormat::for_path(&out));
                    std::fs::write(&out, bytes).map_err(|e| Error::io(&out, e))?;
                }
                None => std::io::stdout()
                    .write_all(&emit_report(&rows, ReportFormat::Markdown))
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
        }
        Command::CheckReport { report } => {
            let bytes = std::fs::read(&report).map_err(|e| Error::io(&report, e))?;
            let rows = match ReportFormat::for_path(&report) {
                ReportFormat::Json => parse_json_report(&bytes)?,
                ReportFormat::Csv => parse_csv_report(&bytes)?,
                ReportFormat::Markdown => {
                    return Err(Error::InvalidArgument("check-report reads .csv or .json reports".into()))
                }
            };
            let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}%"));
            let mut flagged = 0;
            for c in check_time_saved(&rows) {
                let verdict = match (c.consistent, c.reproducible) {
                    (true, true) => "ok",
                    (true, false) => "ROUNDING",
                    (false, _) => "MISMATCH",
                };
                flagged += usize::from(c.flagged());
                println!(
                    "{verdict:8} recorded {:>8}  computed {:>8}  {}",
                    show(c.recorded),
                    show(c.computed),
                    c.query
                );
            }
            eprintln!("{flagged} of {} rows flagged", rows.len());
        }
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(e.to_string()))?;
            runtime.block_on(serve(config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
