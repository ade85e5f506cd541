//! Shared plumbing for external providers: config strings, HTTP helpers,
//! call counting and in-flight throttling.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, ProviderError, Result};

/// A provider configuration string.
///
/// `mock:<arg>?key=value&key=value` selects a built-in test double; anything
/// starting with `http://` or `https://` is a remote endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Mock {
        arg: String,
        params: BTreeMap<String, String>,
    },
    Http {
        url: String,
    },
}

impl FromStr for ProviderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("mock:") {
            let (arg, query) = rest.split_once('?').unwrap_or((rest, ""));
            let mut params = BTreeMap::new();
            for pair in query.split('&').filter(|p| !p.is_empty()) {
                let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
                params.insert(k.to_string(), v.to_string());
            }
            Ok(ProviderSpec::Mock {
                arg: arg.to_string(),
                params,
            })
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(ProviderSpec::Http { url: s.to_string() })
        } else {
            Err(Error::Config(format!(
                "provider must be \"mock:...\" or an http(s) URL, got {s:?}"
            )))
        }
    }
}

impl ProviderSpec {
    pub(crate) fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let ProviderSpec::Mock { params, .. } = self else {
            return Ok(None);
        };
        params
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for mock parameter {key}")))
            })
            .transpose()
    }

    pub(crate) fn latency(&self) -> Result<Duration> {
        Ok(Duration::from_millis(self.param("latency_ms")?.unwrap_or(0)))
    }
}

/// Wraps a provider and counts how many times it is invoked.
///
/// The unit counted depends on the provider kind: embedders count texts
/// embedded, completion and speech providers count requests.
#[derive(Debug, Default)]
pub struct Counted<P> {
    pub(crate) inner: P,
    calls: AtomicUsize,
}

impl<P> Counted<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub(crate) fn record(&self, n: usize) {
        self.calls.fetch_add(n, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

/// Counting semaphore capping concurrent provider calls.
#[derive(Debug)]
pub struct InflightLimit {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl InflightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut in_use = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *in_use >= self.max {
            in_use = self.freed.wait(in_use).unwrap_or_else(|e| e.into_inner());
        }
        *in_use += 1;
        InflightPermit { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_use.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct InflightPermit<'a> {
    limit: &'a InflightLimit,
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut in_use = self.limit.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *in_use -= 1;
        self.limit.freed.notify_one();
    }
}

pub(crate) fn http_client(timeout: Duration) -> std::result::Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Unavailable(e.without_url().to_string()))
}

pub(crate) fn map_transport(err: reqwest::Error, timeout: Duration) -> ProviderError {
    if err.is_timeout() {
        ProviderError::Timeout(timeout)
    } else {
        ProviderError::Unavailable(err.without_url().to_string())
    }
}

/// Maps a non-success HTTP status to a provider error, extracting an
/// `error.message` or `error` field from a JSON body when present.
pub(crate) fn map_status(status: reqwest::StatusCode, body: &str) -> ProviderError {
    let message = serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            let err = v.get("error")?;
            err.get("message")
                .and_then(|m| m.as_str())
                .or_else(|| err.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.chars().take(200).collect());
    if status.is_client_error() {
        ProviderError::Rejected {
            status: status.as_u16(),
            message,
        }
    } else {
        ProviderError::Unavailable(format!("HTTP {}: {message}", status.as_u16()))
    }
}
