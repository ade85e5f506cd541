use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a provider failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    KeywordEmbedding,
    QueryEmbedding,
    ChunkEmbedding,
    Retrieval,
    Generation,
    Stt,
    Tts,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::KeywordEmbedding => "keyword-embedding",
            Stage::QueryEmbedding => "query-embedding",
            Stage::ChunkEmbedding => "chunk-embedding",
            Stage::Retrieval => "retrieval",
            Stage::Generation => "generation",
            Stage::Stt => "stt",
            Stage::Tts => "tts",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Failure reported by an external (or mock) provider.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    /// Network failure or 5xx; worth retrying.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    /// 4xx; retrying will not help.
    #[error("provider rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Timeout(_) | ProviderError::Unavailable(_))
    }

    /// Replaces every occurrence of `secret` in the message.
    pub fn redact(self, secret: &str) -> Self {
        if secret.is_empty() {
            return self;
        }
        let scrub = |m: String| m.replace(secret, "<redacted>");
        match self {
            ProviderError::Timeout(d) => ProviderError::Timeout(d),
            ProviderError::Unavailable(m) => ProviderError::Unavailable(scrub(m)),
            ProviderError::Rejected { status, message } => ProviderError::Rejected {
                status,
                message: scrub(message),
            },
            ProviderError::InvalidResponse(m) => ProviderError::InvalidResponse(scrub(m)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input is not valid UTF-8: {0}")]
    Decode(#[from] std::str::Utf8Error),
    #[error("empty document")]
    EmptyDocument,
    #[error("unsplittable token: {word:?} needs {tokens} tokens but the budget is {budget}")]
    UnsplittableToken {
        word: String,
        tokens: usize,
        budget: usize,
    },
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no query keywords")]
    NoQueryKeywords,
    #[error("no context")]
    NoContext,
    #[error("empty query")]
    EmptyQuery,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u64),
    #[error("parse error in {what} at byte offset {offset}: {message}")]
    Parse {
        what: String,
        offset: usize,
        message: String,
    },
    #[error("corrupt {what}: {message}")]
    Corrupt { what: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", stage_tag(*.stage, .source))]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("chunk {chunk_id}: {source}")]
    Chunk {
        chunk_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("no vector store loaded")]
    NoStore,
    #[error("no keyword index loaded")]
    NoIndex,
    #[error("vector store is empty")]
    EmptyStore,
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("no speech detected")]
    NoSpeech,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("rubric error: {0}")]
    Rubric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("document {0:?} already exists")]
    DuplicateDocument(String),
}

fn stage_tag(stage: Stage, source: &ProviderError) -> String {
    match source {
        ProviderError::Timeout(_) => format!("{stage}-timeout"),
        _ => stage.to_string(),
    }
}

impl Error {
    pub fn provider(stage: Stage, source: ProviderError) -> Self {
        Error::Provider { stage, source }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stage the error originated in, if it came from a provider.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Provider { stage, .. } => Some(*stage),
            Error::Chunk { source, .. } => source.stage(),
            Error::NoSpeech => Some(Stage::Stt),
            _ => None,
        }
    }

    /// Stage tag as reported to callers, e.g. `"generation-timeout"` or `"tts"`.
    pub fn stage_tag(&self) -> Option<String> {
        match self {
            Error::Provider { stage, source } => Some(stage_tag(*stage, source)),
            Error::Chunk { source, .. } => source.stage_tag(),
            Error::NoSpeech => Some(Stage::Stt.to_string()),
            _ => None,
        }
    }

    /// Builds a parse error from a serde_json error, translating line/column to a byte offset.
    pub(crate) fn json(what: &str, input: &str, err: &serde_json::Error) -> Self {
        Error::Parse {
            what: what.to_string(),
            offset: byte_offset(input, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// serde_json reports 1-based line and column (column counted in bytes).
fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}
