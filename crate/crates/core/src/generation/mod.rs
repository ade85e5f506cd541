//! Prompt rendering, context assembly and answer generation.

pub mod llm;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::ingest::{count_tokens, token_spans, ChunkId, SubDocument};
use llm::{CompletionProvider, CompletionRequest};

/// The question-answering prompt. `{context}` and `{query}` are substituted verbatim.
pub const DEFAULT_PROMPT: &str = "Answer the question based on the context below, and if the question can't be answered based on the context, say \"I don't know\"\n\nContext: {context}\n\nQuestion: {query}\nAnswer:";

pub const DEFAULT_TEMPERATURE: f64 = 1e-6;
pub const DEFAULT_CONTEXT_BUDGET: usize = 2048;
pub const MIN_CONTEXT_BUDGET: usize = 32;
pub const FALLBACK_ANSWER: &str = "I don't know";

const CONTEXT: &str = "{context}";
const QUERY: &str = "{query}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for placeholder in [CONTEXT, QUERY] {
            match text.matches(placeholder).count() {
                1 => {}
                0 => return Err(Error::Template(format!("missing placeholder {placeholder}"))),
                n => return Err(Error::Template(format!("placeholder {placeholder} appears {n} times"))),
            }
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_PROMPT.to_string(),
        }
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.text
    }
}

/// Single-pass substitution, so placeholder-like text inside the context or
/// query is left alone.
pub fn render_prompt(template: &PromptTemplate, context: &str, query: &str) -> String {
    let t = template.as_str();
    let mut slots = [
        (t.find(CONTEXT).expect("validated template"), CONTEXT.len(), context),
        (t.find(QUERY).expect("validated template"), QUERY.len(), query),
    ];
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(t.len() + context.len() + query.len());
    let mut pos = 0;
    for (at, len, value) in slots {
        out.push_str(&t[pos..at]);
        out.push_str(value);
        pos = at + len;
    }
    out.push_str(&t[pos..]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_answer_tokens: usize,
    pub model: String,
    #[serde(with = "crate::duration_secs")]
    pub request_timeout: Duration,
    pub retries: u32,
    #[serde(with = "crate::duration_secs")]
    pub retry_backoff: Duration,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_answer_tokens: 256,
            model: "gpt-3.5-turbo-instruct".to_string(),
            request_timeout: Duration::from_secs(30),
            retries: 2,
            retry_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledContext {
    pub text: String,
    pub chunk_ids: Vec<ChunkId>,
}

/// Joins ranked chunks with blank lines until the next one would exceed
/// `budget` tokens. The first chunk is always included, cut to the budget if
/// it is too long on its own.
pub fn assemble_context(ranked: &[&SubDocument], budget: usize) -> Result<AssembledContext> {
    if budget < MIN_CONTEXT_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "context budget must be at least {MIN_CONTEXT_BUDGET}, got {budget}"
        )));
    }
    let (first, rest) = ranked.split_first().ok_or(Error::NoContext)?;

    let mut used = count_tokens(&first.text);
    let mut text = if used > budget {
        let cut = token_spans(&first.text)[budget - 1].end;
        used = budget;
        first.text[..cut].to_string()
    } else {
        first.text.clone()
    };
    let mut chunk_ids = vec![first.chunk_id.clone()];

    for chunk in rest {
        let tokens = count_tokens(&chunk.text);
        if used + tokens > budget {
            break;
        }
        used += tokens;
        text.push_str("\n\n");
        text.push_str(&chunk.text);
        chunk_ids.push(chunk.chunk_id.clone());
    }
    Ok(AssembledContext { text, chunk_ids })
}

/// Calls the provider with retries on timeouts and transient failures.
///
/// The returned duration covers provider calls only (all attempts, no
/// backoff sleeps). The answer is trimmed of surrounding whitespace.
pub fn generate_answer(
    prompt: &str,
    config: &GenerationConfig,
    provider: &dyn CompletionProvider,
) -> Result<(String, Duration)> {
    let request = CompletionRequest {
        model: config.model.clone(),
        prompt: prompt.to_string(),
        temperature: config.temperature,
        max_tokens: config.max_answer_tokens,
        timeout: config.request_timeout,
    };
    let mut spent = Duration::ZERO;
    let mut attempt = 0;
    loop {
        let started = Instant::now();
        let outcome = provider.complete(&request);
        spent += started.elapsed();
        match outcome {
            Ok(text) => return Ok((text.trim().to_string(), spent)),
            Err(e) if e.is_retryable() && attempt < config.retries => {
                tracing::warn!(attempt, error = %e, "completion failed, retrying");
                attempt += 1;
                std::thread::sleep(config.retry_backoff * attempt);
            }
            Err(e) => return Err(Error::provider(Stage::Generation, e)),
        }
    }
}
