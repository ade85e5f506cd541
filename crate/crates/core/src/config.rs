//! Provider selection shared by the CLI and the HTTP service.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{embedder_from_spec, Embedder};
use crate::error::{Error, Result};
use crate::generation::llm::{completion_from_spec, CompletionProvider, Throttled};
use crate::keywords::{ExtractorConfig, KeywordExtractor};
use crate::provider::InflightLimit;
use crate::speech::{stt_from_spec, tts_from_spec, SttProvider, TtsProvider};

/// Provider strings are either `mock:...` or an HTTP endpoint URL.
///
/// The API key for the completion provider is read from the environment
/// variable named by `api_key_env`; it is never stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Embedder behind keyword extraction.
    pub keyword_model: String,
    /// Embedder for the regular retrieval arm.
    pub embedder: String,
    pub llm: String,
    pub stt: String,
    pub tts: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    /// Cap on concurrent completion requests, shared by all callers.
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            keyword_model: "mock:64".into(),
            embedder: "mock:64".into(),
            llm: "mock:extractive".into(),
            stt: "mock:".into(),
            tts: "mock:".into(),
            api_key_env: None,
            timeout_secs: 30.0,
            max_in_flight: 8,
        }
    }
}

#[derive(Clone)]
pub struct Providers {
    pub keyword_model: Arc<dyn Embedder>,
    pub embedder: Arc<dyn Embedder>,
    pub llm: Arc<dyn CompletionProvider>,
    pub stt: Arc<dyn SttProvider>,
    pub tts: Arc<dyn TtsProvider>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("keyword_model", &self.keyword_model.id())
            .field("embedder", &self.embedder.id())
            .finish_non_exhaustive()
    }
}

impl Providers {
    pub fn extractor(&self, config: ExtractorConfig) -> KeywordExtractor {
        KeywordExtractor::new(config, self.keyword_model.clone())
    }
}

impl ProviderConfig {
    pub fn timeout(&self) -> Result<Duration> {
        Duration::try_from_secs_f64(self.timeout_secs)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| Error::Config(format!("timeout_secs must be positive, got {}", self.timeout_secs)))
    }

    pub fn build(&self) -> Result<Providers> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let timeout = self.timeout()?;
        let api_key = match &self.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let llm = completion_from_spec(&self.llm, api_key)?;
        let limit = Arc::new(InflightLimit::new(self.max_in_flight));
        Ok(Providers {
            keyword_model: embedder_from_spec(&self.keyword_model, timeout)?,
            embedder: embedder_from_spec(&self.embedder, timeout)?,
            llm: Arc::new(Throttled::new(llm, limit)),
            stt: stt_from_spec(&self.stt, timeout)?,
            tts: tts_from_spec(&self.tts, timeout)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_offline() {
        let p = ProviderConfig::default().build().unwrap();
        assert_eq!(p.embedder.dimension(), 64);
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let config = ProviderConfig {
            api_key_env: Some("KAR_TEST_SURELY_UNSET_VARIABLE".into()),
            ..Default::default()
        };
        assert!(matches!(config.build(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(toml::from_str::<ProviderConfig>("llm = \"mock:\"\nbogus = 1").is_err());
        let c: ProviderConfig = toml::from_str("llm = \"mock:echo-length\"").unwrap();
        assert_eq!(c.embedder, "mock:64");
    }
}
