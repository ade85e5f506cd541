//! Speech input and output stages: transcribe a spoken query, synthesize the
//! answer, and time both around the text pipeline.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, ProviderError, Result, Stage};
use crate::index::RetrievalMode;
use crate::pipeline::{AnswerRecord, EventLog, Pipeline, PipelineStage, StageEvent};
use crate::provider::{http_client, map_status, map_transport, Counted, ProviderSpec};

pub const SUPPORTED_SAMPLE_RATES: [u32; 4] = [8000, 16000, 22050, 44100];

/// Sample rate of speech sent to transcription providers.
pub const STT_SAMPLE_RATE: u32 = 16000;

/// Bit rate assumed when estimating the duration of MP3 payloads.
pub const MP3_ASSUMED_BITRATE: u32 = 128_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AudioEncoding {
    WavPcm16,
    Mp3,
}

impl AudioEncoding {
    pub fn content_type(self) -> &'static str {
        match self {
            AudioEncoding::WavPcm16 => "audio/wav",
            AudioEncoding::Mp3 => "audio/mpeg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBlob {
    bytes: Vec<u8>,
    encoding: AudioEncoding,
    sample_rate: u32,
    duration: Duration,
}

impl AudioBlob {
    pub fn new(bytes: Vec<u8>, encoding: AudioEncoding, sample_rate: u32, duration: Duration) -> Result<Self> {
        if !SUPPORTED_SAMPLE_RATES.contains(&sample_rate) {
            return Err(Error::UnsupportedAudio(format!("sample rate {sample_rate} Hz")));
        }
        if duration.is_zero() {
            return Err(Error::Precondition("audio has zero duration".into()));
        }
        Ok(Self {
            bytes,
            encoding,
            sample_rate,
            duration,
        })
    }

    /// Parses a 16-bit integer PCM WAV file.
    pub fn from_wav(bytes: Vec<u8>) -> Result<Self> {
        let reader = hound::WavReader::new(Cursor::new(&bytes)).map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::UnsupportedAudio(format!(
                "expected 16-bit PCM, got {} bits {:?}",
                spec.bits_per_sample, spec.sample_format
            )));
        }
        let frames = reader.duration();
        let duration = Duration::from_secs_f64(f64::from(frames) / f64::from(spec.sample_rate));
        Self::new(bytes, AudioEncoding::WavPcm16, spec.sample_rate, duration)
    }

    /// Wraps MP3 bytes. The duration is estimated from the payload size at
    /// [`MP3_ASSUMED_BITRATE`].
    pub fn from_mp3(bytes: Vec<u8>, sample_rate: u32) -> Result<Self> {
        let secs = bytes.len() as f64 * 8.0 / f64::from(MP3_ASSUMED_BITRATE);
        Self::new(bytes, AudioEncoding::Mp3, sample_rate, Duration::from_secs_f64(secs))
    }

    /// Encodes mono samples as a WAV PCM16 blob.
    pub fn wav_from_samples(samples: &[i16], sample_rate: u32) -> Result<Self> {
        let mut bytes = Vec::new();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        {
            let mut writer =
                hound::WavWriter::new(Cursor::new(&mut bytes), spec).map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
            for &s in samples {
                writer.write_sample(s).map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
            }
            writer.finalize().map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
        }
        Self::from_wav(bytes)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_wav(std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn encoding(&self) -> AudioEncoding {
        self.encoding
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> Duration {
        self.duration
    }

    /// Lowercase hex SHA-256 of the raw bytes.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.bytes)
    }
}

fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeechTiming {
    #[serde(with = "crate::duration_secs::option")]
    pub stt: Option<Duration>,
    #[serde(with = "crate::duration_secs::option")]
    pub tts: Option<Duration>,
}

pub trait SttProvider: Send + Sync {
    fn transcribe(&self, audio: &AudioBlob) -> Result<String, ProviderError>;
}

pub trait TtsProvider: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<AudioBlob, ProviderError>;
}

impl<P: SttProvider + ?Sized> SttProvider for Arc<P> {
    fn transcribe(&self, audio: &AudioBlob) -> Result<String, ProviderError> {
        (**self).transcribe(audio)
    }
}

impl<P: TtsProvider + ?Sized> TtsProvider for Arc<P> {
    fn synthesize(&self, text: &str) -> Result<AudioBlob, ProviderError> {
        (**self).synthesize(text)
    }
}

impl<P: SttProvider> SttProvider for Counted<P> {
    fn transcribe(&self, audio: &AudioBlob) -> Result<String, ProviderError> {
        self.record(1);
        self.inner.transcribe(audio)
    }
}

impl<P: TtsProvider> TtsProvider for Counted<P> {
    fn synthesize(&self, text: &str) -> Result<AudioBlob, ProviderError> {
        self.record(1);
        self.inner.synthesize(text)
    }
}

/// Offline transcriber that looks audio up by its SHA-256 fingerprint.
#[derive(Debug, Clone, Default)]
pub struct MockStt {
    fixtures: HashMap<String, String>,
    fallback: Option<String>,
    latency: Duration,
    fail: bool,
}

impl MockStt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixture(mut self, audio: &[u8], transcript: impl Into<String>) -> Self {
        self.fixtures.insert(fingerprint(audio), transcript.into());
        self
    }

    /// Transcript for audio with no fixture. Without one, unknown audio
    /// transcribes to an empty string.
    pub fn with_fallback(mut self, transcript: impl Into<String>) -> Self {
        self.fallback = Some(transcript.into());
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn failing(mut self) -> Self {
        self.fail = true;
        self
    }

    /// Registers every `<name>.wav` in `dir` that has a sibling `<name>.txt`.
    pub fn with_fixture_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "wav") {
                let txt = path.with_extension("txt");
                if txt.exists() {
                    let audio = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    let transcript = std::fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
                    self = self.with_fixture(&audio, transcript.trim());
                }
            }
        }
        Ok(self)
    }
}

impl SttProvider for MockStt {
    fn transcribe(&self, audio: &AudioBlob) -> Result<String, ProviderError> {
        std::thread::sleep(self.latency);
        if self.fail {
            return Err(ProviderError::Unavailable("mock transcriber configured to fail".into()));
        }
        Ok(self
            .fixtures
            .get(&audio.fingerprint())
            .or(self.fallback.as_ref())
            .cloned()
            .unwrap_or_default())
    }
}

/// Seconds of mock speech produced per character of input text.
pub const MOCK_TTS_SECONDS_PER_CHAR: f64 = 0.06;
pub const MOCK_TTS_TONE_HZ: f64 = 440.0;

/// Offline synthesizer producing a 16 kHz PCM16 sine tone whose length is
/// `chars * MOCK_TTS_SECONDS_PER_CHAR` seconds.
#[derive(Debug, Clone, Default)]
pub struct MockTts {
    latency: Duration,
    fail: bool,
}

impl MockTts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn failing(mut self) -> Self {
        self.fail = true;
        self
    }

    pub fn tone(text: &str) -> Result<AudioBlob> {
        let chars = text.chars().count().max(1) as f64;
        let frames = (chars * MOCK_TTS_SECONDS_PER_CHAR * f64::from(STT_SAMPLE_RATE)).round() as usize;
        let rate = f64::from(STT_SAMPLE_RATE);
        let samples: Vec<i16> = (0..frames)
            .map(|n| {
                let t = n as f64 / rate;
                (0.3 * f64::from(i16::MAX) * (2.0 * std::f64::consts::PI * MOCK_TTS_TONE_HZ * t).sin()) as i16
            })
            .collect();
        AudioBlob::wav_from_samples(&samples, STT_SAMPLE_RATE)
    }
}

impl TtsProvider for MockTts {
    fn synthesize(&self, text: &str) -> Result<AudioBlob, ProviderError> {
        std::thread::sleep(self.latency);
        if self.fail {
            return Err(ProviderError::Unavailable("mock synthesizer configured to fail".into()));
        }
        Self::tone(text).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

/// Uploads audio as multipart field `file` and reads `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct HttpStt {
    url: String,
    timeout: Duration,
}

impl HttpStt {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
        }
    }
}

#[derive(Deserialize)]
struct TranscriptResponse {
    text: String,
}

impl SttProvider for HttpStt {
    fn transcribe(&self, audio: &AudioBlob) -> Result<String, ProviderError> {
        let part = reqwest::blocking::multipart::Part::bytes(audio.bytes().to_vec())
            .file_name("query.wav")
            .mime_str(audio.encoding().content_type())
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let form = reqwest::blocking::multipart::Form::new().part("file", part);
        let response = http_client(self.timeout)?
            .post(&self.url)
            .multipart(form)
            .send()
            .map_err(|e| map_transport(e, self.timeout))?;
        let status = response.status();
        let body = response.text().map_err(|e| map_transport(e, self.timeout))?;
        if !status.is_success() {
            return Err(map_status(status, &body));
        }
        serde_json::from_str::<TranscriptResponse>(&body)
            .map(|r| r.text)
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

/// Posts `{"text": ...}` and decodes the audio body by its content type.
#[derive(Debug, Clone)]
pub struct HttpTts {
    url: String,
    timeout: Duration,
}

impl HttpTts {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
        }
    }
}

impl TtsProvider for HttpTts {
    fn synthesize(&self, text: &str) -> Result<AudioBlob, ProviderError> {
        let response = http_client(self.timeout)?
            .post(&self.url)
            .json(&serde_json::json!({ "text": text }))
            .send()
            .map_err(|e| map_transport(e, self.timeout))?;
        let status = response.status();
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_ascii_lowercase();
        let bytes = response.bytes().map_err(|e| map_transport(e, self.timeout))?.to_vec();
        if !status.is_success() {
            return Err(map_status(status, &String::from_utf8_lossy(&bytes)));
        }
        let blob = if content_type.contains("mpeg") || content_type.contains("mp3") {
            AudioBlob::from_mp3(bytes, 44100)
        } else {
            AudioBlob::from_wav(bytes)
        };
        blob.map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

/// Builds a transcriber from `mock:<fallback transcript>[?latency_ms=N&fixtures=DIR&fail=true]`
/// or an HTTP endpoint URL.
pub fn stt_from_spec(spec: &str, timeout: Duration) -> Result<Arc<dyn SttProvider>> {
    let parsed: ProviderSpec = spec.parse()?;
    match &parsed {
        ProviderSpec::Mock { arg, .. } => {
            let mut stt = MockStt::new().with_latency(parsed.latency()?);
            if !arg.is_empty() {
                stt = stt.with_fallback(arg.clone());
            }
            if let Some(dir) = parsed.param::<String>("fixtures")? {
                stt = stt.with_fixture_dir(dir)?;
            }
            if parsed.param("fail")?.unwrap_or(false) {
                stt = stt.failing();
            }
            Ok(Arc::new(stt))
        }
        ProviderSpec::Http { url } => Ok(Arc::new(HttpStt::new(url.clone(), timeout))),
    }
}

/// Builds a synthesizer from `mock:[?latency_ms=N&fail=true]` or an HTTP endpoint URL.
pub fn tts_from_spec(spec: &str, timeout: Duration) -> Result<Arc<dyn TtsProvider>> {
    let parsed: ProviderSpec = spec.parse()?;
    match &parsed {
        ProviderSpec::Mock { .. } => {
            let mut tts = MockTts::new().with_latency(parsed.latency()?);
            if parsed.param("fail")?.unwrap_or(false) {
                tts = tts.failing();
            }
            Ok(Arc::new(tts))
        }
        ProviderSpec::Http { url } => Ok(Arc::new(HttpTts::new(url.clone(), timeout))),
    }
}

/// Transcribes a WAV query. The duration covers the provider call only.
pub fn transcribe(audio: &AudioBlob, provider: &dyn SttProvider) -> Result<(String, Duration)> {
    if audio.encoding() != AudioEncoding::WavPcm16 {
        return Err(Error::UnsupportedAudio("speech input must be WAV PCM16".into()));
    }
    let started = Instant::now();
    let outcome = provider.transcribe(audio);
    let elapsed = started.elapsed();
    let text = outcome.map_err(|e| Error::provider(Stage::Stt, e))?;
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::NoSpeech);
    }
    Ok((text.to_string(), elapsed))
}

pub fn synthesize(text: &str, provider: &dyn TtsProvider) -> Result<(AudioBlob, Duration)> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("cannot synthesize empty text".into()));
    }
    let started = Instant::now();
    let outcome = provider.synthesize(text);
    let elapsed = started.elapsed();
    Ok((outcome.map_err(|e| Error::provider(Stage::Tts, e))?, elapsed))
}

#[derive(Debug, Clone)]
pub struct VoiceAnswer {
    pub record: AnswerRecord,
    pub speech: SpeechTiming,
    pub audio: AudioBlob,
    /// Wall time from the start of transcription to the end of synthesis.
    pub total: Duration,
    pub events: Vec<StageEvent>,
}

/// A failed voice query, with whatever the earlier stages produced.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct VoiceError {
    #[source]
    pub error: Error,
    pub transcript: Option<String>,
    pub record: Option<AnswerRecord>,
    pub speech: SpeechTiming,
}

impl VoiceError {
    pub fn stage_tag(&self) -> Option<String> {
        self.error.stage_tag()
    }
}

/// Transcribe, answer, synthesize, strictly in that order. A failing stage
/// stops the chain before any later provider is called.
#[allow(clippy::result_large_err)]
pub fn voice_query(
    audio: &AudioBlob,
    mode: RetrievalMode,
    pipeline: &Pipeline,
    stt: &dyn SttProvider,
    tts: &dyn TtsProvider,
) -> std::result::Result<VoiceAnswer, VoiceError> {
    let started = Instant::now();
    let mut log = EventLog::new();
    let mut speech = SpeechTiming::default();
    let fail = |error, transcript, record, speech| VoiceError {
        error,
        transcript,
        record,
        speech,
    };

    let stt_started = Instant::now();
    let (query, stt_time) = transcribe(audio, stt).map_err(|e| fail(e, None, None, speech))?;
    log.record(PipelineStage::Stt, stt_started, Instant::now());
    speech.stt = Some(stt_time);

    let record = pipeline
        .answer_logged(&query, mode, &mut log)
        .map_err(|e| fail(e, Some(query.clone()), None, speech))?;

    let tts_started = Instant::now();
    let (answer_audio, tts_time) =
        synthesize(&record.answer, tts).map_err(|e| fail(e, Some(query.clone()), Some(record.clone()), speech))?;
    log.record(PipelineStage::Tts, tts_started, Instant::now());
    speech.tts = Some(tts_time);

    Ok(VoiceAnswer {
        record,
        speech,
        audio: answer_audio,
        total: started.elapsed(),
        events: log.into_events(),
    })
}
