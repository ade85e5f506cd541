//! Benchmark harness: run queries through both retrieval arms, collect
//! latency and accuracy metrics, and render reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RetrievalMode;
use crate::pipeline::Pipeline;
use crate::speech::{synthesize, transcribe, AudioBlob, SttProvider, TtsProvider};

/// Report column headers, in order.
pub const HEADERS: [&str; 10] = [
    "Query",
    "Answer length (Regular)",
    "Time: Regular (in s)",
    "Answer length (KAR)",
    "Time:KAR (in s)",
    "Time saved",
    "Accuracy (KAR)",
    "Accuracy (Regular)",
    "Time(in s) (STT - Query )",
    "Time(in s) (TTS - Answer)",
];

/// Tolerance, in percentage points, when comparing a recorded time-saved
/// value against one recomputed from the raw times.
pub const TIME_SAVED_TOLERANCE: f64 = 0.05;

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Times are recorded at the millisecond resolution reports print, so a
/// report's time-saved column can be recomputed from its own time columns.
pub fn round_ms(secs: f64) -> f64 {
    (secs * 1000.0).round() / 1000.0
}

/// `100 * (regular - kar) / regular`, rounded to 2 decimals. Negative when
/// the keyword arm was slower.
pub fn time_saved(time_regular: f64, time_kar: f64) -> Result<f64> {
    if time_regular.is_nan() || time_regular <= 0.0 || !time_kar.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time saved needs a positive regular time, got {time_regular}"
        )));
    }
    Ok(round2(100.0 * (time_regular - time_kar) / time_regular))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub mode: RetrievalMode,
    /// Stage tag such as `"generation-timeout"`, or absent for non-provider errors.
    pub stage: Option<String>,
    pub message: String,
}

/// One row of a benchmark report. Times are seconds, percentages are 0–100.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkRow {
    pub query: String,
    pub answer_length_regular: Option<usize>,
    pub time_regular: Option<f64>,
    pub answer_length_kar: Option<usize>,
    pub time_kar: Option<f64>,
    pub time_saved: Option<f64>,
    pub accuracy_kar: Option<f64>,
    pub accuracy_regular: Option<f64>,
    pub stt_time: Option<f64>,
    pub tts_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_regular: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_kar: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ArmFailure>,
}

impl BenchmarkRow {
    pub fn is_failed(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Time saved recomputed from the row's raw times.
    pub fn computed_time_saved(&self) -> Option<f64> {
        time_saved(self.time_regular?, self.time_kar?).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Incorrect,
    Partial,
    Complete,
}

/// A human accuracy judgment for one query answered in one mode.
///
/// `incorrect` scores 0, `complete` scores 100, `partial` needs an explicit
/// value strictly between 0 and 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRubricEntry {
    pub query: String,
    pub mode: RetrievalMode,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default)]
    pub note: String,
}

impl AccuracyRubricEntry {
    pub fn accuracy(&self) -> Result<f64> {
        let bad = |msg: String| Error::Rubric(format!("{:?} ({}): {msg}", self.query, self.mode));
        if let Some(v) = self.value {
            if !(0.0..=100.0).contains(&v) {
                return Err(bad(format!("accuracy {v} is outside [0, 100]")));
            }
        }
        match (self.verdict, self.value) {
            (Verdict::Incorrect, None | Some(0.0)) => Ok(0.0),
            (Verdict::Complete, None | Some(100.0)) => Ok(100.0),
            (Verdict::Partial, Some(v)) if v > 0.0 && v < 100.0 => Ok(v),
            (Verdict::Partial, None) => Err(bad("partial verdict needs a value".into())),
            (verdict, Some(v)) => Err(bad(format!("value {v} does not match verdict {verdict:?}"))),
        }
    }
}

/// Validated accuracy judgments keyed by query and mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rubric {
    scores: HashMap<(String, RetrievalMode), f64>,
}

impl Rubric {
    pub fn new(entries: &[AccuracyRubricEntry]) -> Result<Self> {
        let mut scores = HashMap::new();
        for e in entries {
            let key = (e.query.trim().to_string(), e.mode);
            if scores.insert(key, e.accuracy()?).is_some() {
                return Err(Error::Rubric(format!("duplicate entry for {:?} ({})", e.query, e.mode)));
            }
        }
        Ok(Self { scores })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<AccuracyRubricEntry> =
            serde_json::from_str(text).map_err(|e| Error::json("rubric", text, &e))?;
        Self::new(&entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn accuracy(&self, query: &str, mode: RetrievalMode) -> Option<f64> {
        self.scores.get(&(query.trim().to_string(), mode)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// One query per line; blank lines are skipped.
pub fn parse_queries(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArmOrder {
    #[default]
    RegularFirst,
    KarFirst,
}

/// Speech providers and optional per-query audio. `audio[i]` belongs to the
/// i-th query; queries without audio get no STT timing. TTS reads out the
/// keyword arm's answer (or the regular one if that arm failed).
pub struct SpeechHarness<'a> {
    pub stt: &'a dyn SttProvider,
    pub tts: &'a dyn TtsProvider,
    pub audio: Vec<Option<AudioBlob>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub order: ArmOrder,
    /// Worker threads. Values above 1 make timings less comparable.
    pub parallel: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            order: ArmOrder::RegularFirst,
            parallel: 1,
        }
    }
}

/// Runs every query through both arms. Per-arm time is the wall clock
/// around the full answer call (retrieval, prompt rendering, generation),
/// rounded to milliseconds.
/// A failing arm marks the row failed; the run continues.
pub fn run_benchmark(
    queries: &[String],
    pipeline: &Pipeline,
    rubric: Option<&Rubric>,
    speech: Option<&SpeechHarness<'_>>,
    config: &BenchConfig,
) -> Vec<BenchmarkRow> {
    let run = |i: usize| bench_query(i, &queries[i], pipeline, rubric, speech, config.order);
    let workers = config.parallel.max(1).min(queries.len().max(1));
    if workers == 1 {
        return (0..queries.len()).map(run).collect();
    }
    tracing::warn!(workers, "running queries in parallel; per-query timings are less comparable");
    let mut rows: Vec<Option<BenchmarkRow>> = vec![None; queries.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run = &run;
                scope.spawn(move || {
                    (w..queries.len())
                        .step_by(workers)
                        .map(|i| (i, run(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("benchmark worker panicked") {
                rows[i] = Some(row);
            }
        }
    });
    rows.into_iter().map(|r| r.expect("every query ran")).collect()
}

fn bench_query(
    i: usize,
    query: &str,
    pipeline: &Pipeline,
    rubric: Option<&Rubric>,
    speech: Option<&SpeechHarness<'_>>,
    order: ArmOrder,
) -> BenchmarkRow {
    let mut row = BenchmarkRow {
        query: query.to_string(),
        ..Default::default()
    };
    let modes = match order {
        ArmOrder::RegularFirst => [RetrievalMode::Regular, RetrievalMode::Kar],
        ArmOrder::KarFirst => [RetrievalMode::Kar, RetrievalMode::Regular],
    };
    for mode in modes {
        let started = Instant::now();
        let outcome = pipeline.answer(query, mode);
        let elapsed = round_ms(started.elapsed().as_secs_f64());
        match outcome {
            Ok(record) => {
                let len = Some(record.answer_length);
                match mode {
                    RetrievalMode::Regular => {
                        row.answer_length_regular = len;
                        row.time_regular = Some(elapsed);
                        row.answer_regular = Some(record.answer);
                    }
                    RetrievalMode::Kar => {
                        row.answer_length_kar = len;
                        row.time_kar = Some(elapsed);
                        row.answer_kar = Some(record.answer);
                    }
                }
            }
            Err(e) => row.failures.push(ArmFailure {
                mode,
                stage: e.stage_tag(),
                message: e.to_string(),
            }),
        }
    }
    row.time_saved = row.computed_time_saved();
    if let Some(rubric) = rubric {
        row.accuracy_kar = rubric.accuracy(query, RetrievalMode::Kar);
        row.accuracy_regular = rubric.accuracy(query, RetrievalMode::Regular);
    }
    if let Some(speech) = speech {
        if let Some(Some(audio)) = speech.audio.get(i) {
            match transcribe(audio, speech.stt) {
                Ok((_, t)) => row.stt_time = Some(round_ms(t.as_secs_f64())),
                Err(e) => row.failures.push(speech_failure(e)),
            }
        }
        if let Some(answer) = row.answer_kar.clone().or_else(|| row.answer_regular.clone()) {
            match synthesize(&answer, speech.tts) {
                Ok((_, t)) => row.tts_time = Some(round_ms(t.as_secs_f64())),
                Err(e) => row.failures.push(speech_failure(e)),
            }
        }
    }
    row
}

fn speech_failure(e: Error) -> ArmFailure {
    ArmFailure {
        mode: RetrievalMode::Kar,
        stage: e.stage_tag(),
        message: e.to_string(),
    }
}

/// A recorded time-saved value compared against the raw times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSavedCheck {
    pub query: String,
    pub recorded: Option<f64>,
    pub computed: Option<f64>,
    /// Recorded and computed values agree within [`TIME_SAVED_TOLERANCE`].
    pub consistent: bool,
    /// The recorded value is the exact ratio rounded or truncated to two
    /// decimals. False marks a discrepancy even when within tolerance.
    pub reproducible: bool,
}

impl TimeSavedCheck {
    pub fn flagged(&self) -> bool {
        !self.consistent || !self.reproducible
    }
}

pub fn check_time_saved(rows: &[BenchmarkRow]) -> Vec<TimeSavedCheck> {
    rows.iter()
        .map(|r| {
            let computed = r.computed_time_saved();
            let consistent = match (r.time_saved, computed) {
                (Some(a), Some(b)) => (a - b).abs() <= TIME_SAVED_TOLERANCE + 1e-9,
                (None, None) => true,
                _ => false,
            };
            let exact = match (r.time_regular, r.time_kar) {
                (Some(reg), Some(kar)) if reg > 0.0 => Some(100.0 * (reg - kar) / reg),
                _ => None,
            };
            let reproducible = match (r.time_saved, exact) {
                (Some(a), Some(x)) => {
                    let truncated = (x * 100.0 + x.signum() * 1e-9).trunc() / 100.0;
                    (a - round2(x)).abs() < 1e-9 || (a - truncated).abs() < 1e-9
                }
                (None, None) => true,
                _ => false,
            };
            TimeSavedCheck {
                query: r.query.clone(),
                recorded: r.time_saved,
                computed,
                consistent,
                reproducible,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    /// Format implied by a file extension, defaulting to markdown.
    pub fn for_path(path: &Path) -> Self {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(|e| e.parse().ok())
            .unwrap_or(ReportFormat::Markdown)
    }
}

/// Fixed decimals, widened when that would lose precision.
fn fmt_fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        v.to_string()
    }
}

fn fmt_time(t: Option<f64>) -> Option<String> {
    t.map(|t| fmt_fixed(t, 3))
}

fn fmt_pct(p: Option<f64>) -> Option<String> {
    p.map(|p| fmt_fixed(p, 2))
}

fn cells(row: &BenchmarkRow) -> [Option<String>; 10] {
    [
        Some(row.query.clone()),
        row.answer_length_regular.map(|n| n.to_string()),
        fmt_time(row.time_regular),
        row.answer_length_kar.map(|n| n.to_string()),
        fmt_time(row.time_kar),
        fmt_pct(row.time_saved),
        fmt_pct(row.accuracy_kar),
        fmt_pct(row.accuracy_regular),
        fmt_time(row.stt_time),
        fmt_time(row.tts_time),
    ]
}

pub fn emit_report(rows: &[BenchmarkRow], format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Markdown => markdown(rows).into_bytes(),
        ReportFormat::Csv => csv_report(rows),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(rows).expect("rows serialize");
            out.push(b'\n');
            out
        }
    }
}

fn markdown(rows: &[BenchmarkRow]) -> String {
    let mut out = format!("| {} |\n|{}\n", HEADERS.join(" | "), "---|".repeat(HEADERS.len()));
    for row in rows {
        let cols: Vec<String> = cells(row)
            .into_iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some(c) if i == 0 => c.replace('|', "\\|"),
                Some(c) if (5..=7).contains(&i) => format!("{c}%"),
                Some(c) => c,
                None => "-".into(),
            })
            .collect();
        let _ = writeln!(out, "| {} |", cols.join(" | "));
    }

    let failed: Vec<_> = rows.iter().filter(|r| r.is_failed()).collect();
    let inconsistent: Vec<_> = check_time_saved(rows).into_iter().filter(|c| c.flagged()).collect();
    if !failed.is_empty() || !inconsistent.is_empty() {
        out.push_str("\nNotes:\n");
    }
    for row in failed {
        for f in &row.failures {
            let _ = writeln!(
                out,
                "- {:?} ({}): failed at {}: {}",
                row.query,
                f.mode,
                f.stage.as_deref().unwrap_or("-"),
                f.message
            );
        }
    }
    for c in inconsistent {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}%"));
        let _ = writeln!(
            out,
            "- {:?}: time saved recorded as {} but the times give {}{}",
            c.query,
            show(c.recorded),
            show(c.computed),
            if c.consistent { " (within tolerance, not a rounding of the exact value)" } else { "" }
        );
    }
    out
}

fn csv_report(rows: &[BenchmarkRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADERS).expect("in-memory write");
    for row in rows {
        w.write_record(cells(row).iter().map(|c| c.as_deref().unwrap_or("")))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn parse_cell<T: FromStr>(cell: &str, line: u64, column: &str) -> Result<Option<T>> {
    let cell = cell.trim().trim_end_matches('%');
    if cell.is_empty() || cell == "-" {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Parse {
        what: "csv report".into(),
        offset: line as usize,
        message: format!("bad value {cell:?} in column {column:?}"),
    })
}

/// Reads a CSV report with the standard headers. Percent signs are accepted.
pub fn parse_csv_report(bytes: &[u8]) -> Result<Vec<BenchmarkRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let csv_err = |e: csv::Error| Error::Parse {
        what: "csv report".into(),
        offset: e.position().map_or(0, |p| p.byte() as usize),
        message: e.to_string(),
    };
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().map(str::trim).ne(HEADERS.iter().map(|h| h.trim())) {
        return Err(Error::Parse {
            what: "csv report".into(),
            offset: 0,
            message: "unexpected header row".into(),
        });
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let at = record.position().map_or(0, |p| p.byte());
        let get = |i: usize| record.get(i).unwrap_or("");
        rows.push(BenchmarkRow {
            query: get(0).to_string(),
            answer_length_regular: parse_cell(get(1), at, HEADERS[1])?,
            time_regular: parse_cell(get(2), at, HEADERS[2])?,
            answer_length_kar: parse_cell(get(3), at, HEADERS[3])?,
            time_kar: parse_cell(get(4), at, HEADERS[4])?,
            time_saved: parse_cell(get(5), at, HEADERS[5])?,
            accuracy_kar: parse_cell(get(6), at, HEADERS[6])?,
            accuracy_regular: parse_cell(get(7), at, HEADERS[7])?,
            stt_time: parse_cell(get(8), at, HEADERS[8])?,
            tts_time: parse_cell(get(9), at, HEADERS[9])?,
            ..Default::default()
        });
    }
    Ok(rows)
}

pub fn parse_json_report(bytes: &[u8]) -> Result<Vec<BenchmarkRow>> {
    let text = std::str::from_utf8(bytes)?;
    serde_json::from_str(text).map_err(|e| Error::json("json report", text, &e))
}
