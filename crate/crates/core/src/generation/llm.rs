//! Completion providers.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::provider::{http_client, map_status, map_transport, Counted, InflightLimit, ProviderSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(skip)]
    pub timeout: Duration,
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: CompletionProvider> CompletionProvider for Counted<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.record(1);
        self.inner.complete(request)
    }
}

/// Shares an in-flight cap across every caller of the wrapped provider.
pub struct Throttled<P> {
    inner: P,
    limit: Arc<InflightLimit>,
}

impl<P> Throttled<P> {
    pub fn new(inner: P, limit: Arc<InflightLimit>) -> Self {
        Self { inner, limit }
    }
}

impl<P: CompletionProvider> CompletionProvider for Throttled<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let _permit = self.limit.acquire();
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Answers `len=<n>` where `n` is the prompt's character count.
    EchoLength,
    Fixed(String),
    /// Answers with the first sentence of the prompt's context, or
    /// `I don't know` when the context is empty.
    Extractive,
}

/// Offline completion provider with optional latency and scripted failures.
#[derive(Debug)]
pub struct MockCompletion {
    behavior: MockBehavior,
    latency: Duration,
    script: Mutex<VecDeque<ProviderError>>,
}

impl MockCompletion {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            latency: Duration::ZERO,
            script: Mutex::new(VecDeque::new()),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// The next calls fail with these errors, in order, before behaving normally.
    pub fn failing_with(self, errors: impl IntoIterator<Item = ProviderError>) -> Self {
        self.script.lock().unwrap().extend(errors);
        self
    }

    fn answer(&self, prompt: &str) -> String {
        match &self.behavior {
            MockBehavior::EchoLength => format!("len={}", prompt.chars().count()),
            MockBehavior::Fixed(text) => text.clone(),
            MockBehavior::Extractive => {
                let context = prompt
                    .split_once("Context: ")
                    .and_then(|(_, rest)| rest.split_once("\n\nQuestion:"))
                    .map(|(ctx, _)| ctx.trim())
                    .unwrap_or("");
                first_sentence(context).unwrap_or_else(|| "I don't know".to_string())
            }
        }
    }
}

fn first_sentence(text: &str) -> Option<String> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let end = text
        .char_indices()
        .find(|&(i, c)| {
            matches!(c, '.' | '!' | '?') && text[i + c.len_utf8()..].starts_with(char::is_whitespace)
        })
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(text.len());
    Some(text[..end].to_string())
}

impl CompletionProvider for MockCompletion {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        if self.latency > request.timeout {
            std::thread::sleep(request.timeout);
            return Err(ProviderError::Timeout(request.timeout));
        }
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        if let Some(err) = self.script.lock().unwrap().pop_front() {
            return Err(err);
        }
        Ok(self.answer(&request.prompt))
    }
}

/// Client for the widely deployed `/completions` JSON shape:
/// `{model, prompt, temperature, max_tokens}` answered by `choices[0].text`.
pub struct HttpCompletion {
    endpoint: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpCompletion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpCompletion")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

impl HttpCompletion {
    /// `base_url` may be the full endpoint or a base ending before `/completions`.
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/completions")
        };
        Self { endpoint, api_key }
    }
}

impl CompletionProvider for HttpCompletion {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.send(request)
            .map_err(|e| match &self.api_key {
                Some(key) => e.redact(key),
                None => e,
            })
    }
}

impl HttpCompletion {
    fn send(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let client = http_client(request.timeout)?;
        let mut req = client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().map_err(|e| map_transport(e, request.timeout))?;
        let status = response.status();
        let body = response.text().map_err(|e| map_transport(e, request.timeout))?;
        if !status.is_success() {
            return Err(map_status(status, &body));
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| ProviderError::InvalidResponse("no choices in response".into()))
    }
}

/// Builds a completion provider from `mock:<echo-length|extractive|fixed=TEXT>[?latency_ms=N]`
/// or an HTTP base URL.
pub fn completion_from_spec(spec: &str, api_key: Option<String>) -> Result<Arc<dyn CompletionProvider>> {
    let parsed: ProviderSpec = spec.parse()?;
    match &parsed {
        ProviderSpec::Mock { arg, .. } => {
            let behavior = match arg.as_str() {
                "" | "extractive" => MockBehavior::Extractive,
                "echo-length" => MockBehavior::EchoLength,
                other => match other.strip_prefix("fixed=") {
                    Some(text) => MockBehavior::Fixed(text.to_string()),
                    None => return Err(Error::Config(format!("unknown mock completion {other:?}"))),
                },
            };
            Ok(Arc::new(MockCompletion::new(behavior).with_latency(parsed.latency()?)))
        }
        ProviderSpec::Http { url } => Ok(Arc::new(HttpCompletion::new(url, api_key))),
    }
}
