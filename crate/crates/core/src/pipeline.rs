//! The two-step question answering pipeline: identify context (keyword
//! matching or embedding similarity), then generate an answer from it.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baseline::{regular_retrieve, VectorStore};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::generation::llm::CompletionProvider;
use crate::generation::{
    assemble_context, generate_answer, render_prompt, GenerationConfig, PromptTemplate, DEFAULT_CONTEXT_BUDGET,
    FALLBACK_ANSWER,
};
use crate::index::{match_query, KeywordIndex, RetrievalMode, RetrievalResult, Scoring, DEFAULT_TOP_K};
use crate::ingest::{ChunkId, ChunkStore, SubDocument};
use crate::keywords::KeywordExtractor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub scoring: Scoring,
    pub context_budget: usize,
    /// Call the model even when keyword matching finds nothing.
    pub always_call_llm: bool,
    pub generation: GenerationConfig,
    pub prompt: PromptTemplate,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            scoring: Scoring::default(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
            always_call_llm: false,
            generation: GenerationConfig::default(),
            prompt: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(with = "crate::duration_secs")]
    pub retrieval: Duration,
    #[serde(with = "crate::duration_secs")]
    pub generation: Duration,
    /// Wall time of the whole call; at least `retrieval + generation`.
    #[serde(with = "crate::duration_secs")]
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query: String,
    pub answer: String,
    /// Character count of `answer`.
    pub answer_length: usize,
    pub mode: RetrievalMode,
    pub timings: StageTimings,
    pub context_chunk_ids: Vec<ChunkId>,
    pub context_headings: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_keywords: Option<Vec<String>>,
}

impl AnswerRecord {
    /// Same answer and context, ignoring timings.
    pub fn same_outcome(&self, other: &AnswerRecord) -> bool {
        self.query == other.query
            && self.answer == other.answer
            && self.mode == other.mode
            && self.context_chunk_ids == other.context_chunk_ids
            && self.query_keywords == other.query_keywords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Stt,
    Retrieval,
    Generation,
    Tts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: PipelineStage,
    /// Offsets from the start of the log.
    #[serde(with = "crate::duration_secs")]
    pub started: Duration,
    #[serde(with = "crate::duration_secs")]
    pub finished: Duration,
}

/// Records when each pipeline stage ran, relative to a common origin.
#[derive(Debug, Clone)]
pub struct EventLog {
    origin: Instant,
    events: Vec<StageEvent>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            events: Vec::new(),
        }
    }

    pub fn record(&mut self, stage: PipelineStage, started: Instant, finished: Instant) {
        self.events.push(StageEvent {
            stage,
            started: started.saturating_duration_since(self.origin),
            finished: finished.saturating_duration_since(self.origin),
        });
    }

    pub fn events(&self) -> &[StageEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<StageEvent> {
        self.events
    }

    pub fn find(&self, stage: PipelineStage) -> Option<&StageEvent> {
        self.events.iter().find(|e| e.stage == stage)
    }
}

/// Everything needed to answer queries over one corpus.
///
/// The keyword extractor is the keyword model; `embedder` is the retrieval
/// embedder used only by the regular arm. They may share a provider.
#[derive(Clone)]
pub struct Pipeline {
    chunks: Arc<ChunkStore>,
    index: Option<Arc<KeywordIndex>>,
    store: Option<Arc<VectorStore>>,
    extractor: KeywordExtractor,
    embedder: Arc<dyn Embedder>,
    llm: Arc<dyn CompletionProvider>,
    config: PipelineConfig,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("chunks", &self.chunks.len())
            .field("index", &self.index.as_ref().map(|i| i.len()))
            .field("store", &self.store.as_ref().map(|s| s.len()))
            .field("extractor", &self.extractor)
            .field("embedder", &self.embedder.id())
            .field("config", &self.config)
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        chunks: Arc<ChunkStore>,
        extractor: KeywordExtractor,
        embedder: Arc<dyn Embedder>,
        llm: Arc<dyn CompletionProvider>,
    ) -> Self {
        Self {
            chunks,
            index: None,
            store: None,
            extractor,
            embedder,
            llm,
            config: PipelineConfig::default(),
        }
    }

    pub fn with_index(mut self, index: Arc<KeywordIndex>) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_store(mut self, store: Arc<VectorStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn chunks(&self) -> &Arc<ChunkStore> {
        &self.chunks
    }

    pub fn index(&self) -> Option<&Arc<KeywordIndex>> {
        self.index.as_ref()
    }

    pub fn store(&self) -> Option<&Arc<VectorStore>> {
        self.store.as_ref()
    }

    pub fn extractor(&self) -> &KeywordExtractor {
        &self.extractor
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn llm(&self) -> &Arc<dyn CompletionProvider> {
        &self.llm
    }

    /// Context identification only.
    pub fn retrieve(&self, query: &str, mode: RetrievalMode) -> Result<RetrievalResult> {
        match mode {
            RetrievalMode::Kar => {
                let started = Instant::now();
                let index = self.index.as_ref().ok_or(Error::NoIndex)?;
                let keywords = self.extractor.extract_query(query)?;
                let mut result = match_query(index, &keywords, self.config.top_k, self.config.scoring)?;
                result.elapsed = started.elapsed();
                Ok(result)
            }
            RetrievalMode::Regular => {
                let store = self.store.as_ref().ok_or(Error::NoStore)?;
                regular_retrieve(store, query, self.embedder.as_ref(), self.config.top_k)
            }
        }
    }

    pub fn answer(&self, query: &str, mode: RetrievalMode) -> Result<AnswerRecord> {
        self.answer_logged(query, mode, &mut EventLog::new())
    }

    /// Answers `query`, recording retrieval and generation into `log`.
    ///
    /// In keyword mode a query whose keywords match no chunk is answered
    /// with "I don't know" without calling the model, unless
    /// `always_call_llm` is set.
    pub fn answer_logged(&self, query: &str, mode: RetrievalMode, log: &mut EventLog) -> Result<AnswerRecord> {
        let started = Instant::now();
        let query = query.trim();
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }

        let retrieval_started = Instant::now();
        let retrieval = match self.retrieve(query, mode) {
            Ok(r) => r,
            Err(Error::NoQueryKeywords) => RetrievalResult {
                mode,
                ranked: Vec::new(),
                query_keywords: None,
                elapsed: retrieval_started.elapsed(),
            },
            Err(e) => return Err(e),
        };
        let retrieval_finished = Instant::now();
        log.record(PipelineStage::Retrieval, retrieval_started, retrieval_finished);
        let retrieval_time = retrieval_finished - retrieval_started;

        let query_keywords = match mode {
            RetrievalMode::Kar => Some(
                retrieval
                    .query_keywords
                    .as_ref()
                    .map(|k| k.phrases().map(str::to_string).collect())
                    .unwrap_or_default(),
            ),
            RetrievalMode::Regular => None,
        };

        let ranked: Vec<&SubDocument> = retrieval
            .ranked
            .iter()
            .map(|s| {
                self.chunks.get(&s.chunk_id).ok_or_else(|| Error::Corrupt {
                    what: "corpus".into(),
                    message: format!("chunk {} is indexed but has no text", s.chunk_id),
                })
            })
            .collect::<Result<_>>()?;

        let (context_text, context_ids) = if ranked.is_empty() {
            if !self.config.always_call_llm {
                let answer = FALLBACK_ANSWER.to_string();
                return Ok(AnswerRecord {
                    query: query.to_string(),
                    answer_length: answer.chars().count(),
                    answer,
                    mode,
                    timings: StageTimings {
                        retrieval: retrieval_time,
                        generation: Duration::ZERO,
                        total: started.elapsed(),
                    },
                    context_chunk_ids: Vec::new(),
                    context_headings: Vec::new(),
                    query_keywords,
                });
            }
            (String::new(), Vec::new())
        } else {
            let ctx = assemble_context(&ranked, self.config.context_budget)?;
            (ctx.text, ctx.chunk_ids)
        };

        let prompt = render_prompt(&self.config.prompt, &context_text, query);
        let generation_started = Instant::now();
        let (answer, generation_time) = generate_answer(&prompt, &self.config.generation, self.llm.as_ref())?;
        log.record(PipelineStage::Generation, generation_started, Instant::now());

        let context_headings = context_ids
            .iter()
            .filter_map(|id| self.chunks.get(id))
            .map(|c| c.heading_path.clone())
            .collect();
        Ok(AnswerRecord {
            query: query.to_string(),
            answer_length: answer.chars().count(),
            answer,
            mode,
            timings: StageTimings {
                retrieval: retrieval_time,
                generation: generation_time,
                total: started.elapsed(),
            },
            context_chunk_ids: context_ids,
            context_headings,
            query_keywords,
        })
    }
}
