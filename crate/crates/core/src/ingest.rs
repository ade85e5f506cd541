//! Document parsing and token-budgeted chunking.
//!
//! A [`Document`] is a list of heading-scoped [`Section`]s. Each section is
//! split independently into [`SubDocument`]s no larger than the token budget,
//! preferring sentence boundaries and falling back to word boundaries. Chunks
//! never overlap and never span sections.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_BUDGET: usize = 512;
pub const MIN_CHUNK_BUDGET: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    /// ATX headings (`#` .. `######`).
    #[default]
    Markdown,
    /// Headings written as `= Title =`, `== Sub ==`; the number of `=` is the level.
    Plaintext,
}

impl FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(SourceFormat::Markdown),
            "plaintext" | "txt" | "plaintext-with-heading-markers" => Ok(SourceFormat::Plaintext),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    /// Outermost heading first; empty for text preceding the first heading.
    pub heading_path: Vec<String>,
    pub body: String,
}

/// Identifier of a chunk: parent document plus its position in reading order.
///
/// Serialized as `"<doc_id>#<seq>"`. Ordering is by document id, then by
/// sequence number, so sorting chunk ids yields document order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkId {
    pub doc_id: String,
    pub seq: u32,
}

impl ChunkId {
    pub fn new(doc_id: impl Into<String>, seq: u32) -> Self {
        Self {
            doc_id: doc_id.into(),
            seq,
        }
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.seq)
    }
}

impl FromStr for ChunkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (doc, seq) = s
            .rsplit_once('#')
            .ok_or_else(|| Error::InvalidArgument(format!("malformed chunk id {s:?}")))?;
        let seq = seq
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("malformed chunk id {s:?}")))?;
        Ok(ChunkId::new(doc, seq))
    }
}

impl Serialize for ChunkId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ChunkId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubDocument {
    pub chunk_id: ChunkId,
    pub doc_id: String,
    pub heading_path: Vec<String>,
    pub text: String,
    pub token_count: usize,
}

/// Parses raw bytes into a heading-structured document.
pub fn parse_document(doc_id: &str, raw: &[u8], format: SourceFormat) -> Result<Document> {
    let text = std::str::from_utf8(raw)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }

    let mut sections = Vec::new();
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut current_path: Vec<String> = Vec::new();
    let mut body_start = 0;
    let mut first_h1: Option<String> = None;
    let mut first_heading: Option<String> = None;
    let mut fence: Option<&str> = None;
    let mut offset = 0;

    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();

        if format == SourceFormat::Markdown {
            let trimmed = line.trim_start();
            let marker = ["```", "~~~"].into_iter().find(|m| trimmed.starts_with(m));
            match (fence, marker) {
                (None, Some(m)) => {
                    fence = Some(m);
                    continue;
                }
                (Some(open), Some(m)) if open == m => {
                    fence = None;
                    continue;
                }
                (Some(_), _) => continue,
                _ => {}
            }
        }

        let heading = match format {
            SourceFormat::Markdown => atx_heading(line),
            SourceFormat::Plaintext => marker_heading(line),
        };
        let Some((level, title)) = heading else {
            continue;
        };

        push_section(&mut sections, &current_path, &text[body_start..line_start]);
        while stack.last().is_some_and(|(l, _)| *l >= level) {
            stack.pop();
        }
        stack.push((level, title.to_string()));
        current_path = stack.iter().map(|(_, t)| t.clone()).collect();
        body_start = offset;

        if first_heading.is_none() {
            first_heading = Some(title.to_string());
        }
        if level == 1 && first_h1.is_none() {
            first_h1 = Some(title.to_string());
        }
    }
    push_section(&mut sections, &current_path, &text[body_start..]);

    let title = first_h1
        .or(first_heading)
        .unwrap_or_else(|| doc_id.to_string());
    Ok(Document {
        doc_id: doc_id.to_string(),
        title,
        sections,
    })
}

fn push_section(sections: &mut Vec<Section>, path: &[String], body: &str) {
    let body = body.trim();
    // Text before the first heading only becomes a section if it has content.
    if path.is_empty() && body.is_empty() {
        return;
    }
    sections.push(Section {
        heading_path: path.to_vec(),
        body: body.to_string(),
    });
}

fn atx_heading(line: &str) -> Option<(usize, &str)> {
    let line = line.trim_end_matches(['\n', '\r']);
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let level = rest.len() - rest.trim_start_matches('#').len();
    if !(1..=6).contains(&level) {
        return None;
    }
    let rest = &rest[level..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    let mut title = rest.trim();
    // Optional closing sequence: `## Title ##`
    let without_hashes = title.trim_end_matches('#');
    if without_hashes.is_empty() || without_hashes.ends_with([' ', '\t']) {
        title = without_hashes.trim_end();
    }
    (!title.is_empty()).then_some((level, title))
}

fn marker_heading(line: &str) -> Option<(usize, &str)> {
    let line = line.trim();
    let level = line.len() - line.trim_start_matches('=').len();
    if level == 0 {
        return None;
    }
    let title = line[level..].trim_end_matches('=').trim();
    (!title.is_empty()).then_some((level, title))
}

/// Pluggable token counter. Implementations must be additive over
/// whitespace-separated words for chunk budgets to hold exactly.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Reference tokenizer: runs of alphanumeric characters (and `_`) are one
/// token each, every other non-whitespace character is a token on its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn count(&self, text: &str) -> usize {
        count_tokens(text)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte ranges of the reference tokens in `text`.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut word: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            word.get_or_insert(i);
            continue;
        }
        if let Some(start) = word.take() {
            spans.push(start..i);
        }
        if !c.is_whitespace() {
            spans.push(i..i + c.len_utf8());
        }
    }
    if let Some(start) = word {
        spans.push(start..text.len());
    }
    spans
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

/// Splits every section of `doc` into chunks of at most `budget` tokens.
pub fn chunk_document(doc: &Document, budget: usize) -> Result<Vec<SubDocument>> {
    chunk_document_with(doc, budget, &WordPunctTokenizer)
}

pub fn chunk_document_with(
    doc: &Document,
    budget: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<SubDocument>> {
    if budget < MIN_CHUNK_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "chunk budget must be at least {MIN_CHUNK_BUDGET}, got {budget}"
        )));
    }
    let mut chunks = Vec::new();
    let mut seq = 0u32;
    for section in &doc.sections {
        for span in split_section(&section.body, budget, tokenizer)? {
            let text = &section.body[span.range];
            chunks.push(SubDocument {
                chunk_id: ChunkId::new(&doc.doc_id, seq),
                doc_id: doc.doc_id.clone(),
                heading_path: section.heading_path.clone(),
                text: text.to_string(),
                token_count: span.tokens,
            });
            seq += 1;
        }
    }
    Ok(chunks)
}

struct Word {
    range: Range<usize>,
    tokens: usize,
    ends_sentence: bool,
}

struct Span {
    range: Range<usize>,
    tokens: usize,
}

fn words(body: &str, tokenizer: &dyn Tokenizer) -> Vec<Word> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let push = |range: Range<usize>, out: &mut Vec<Word>| {
        let w = &body[range.clone()];
        out.push(Word {
            tokens: tokenizer.count(w),
            ends_sentence: w.ends_with(['.', '!', '?']),
            range,
        });
    };
    for (i, c) in body.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s..i, &mut out);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s..body.len(), &mut out);
    }
    out
}

/// Greedy packing: whole sentences while they fit, oversized sentences are
/// broken at word boundaries.
fn split_section(body: &str, budget: usize, tokenizer: &dyn Tokenizer) -> Result<Vec<Span>> {
    let words = words(body, tokenizer);
    if let Some(w) = words.iter().find(|w| w.tokens > budget) {
        return Err(Error::UnsplittableToken {
            word: body[w.range.clone()].to_string(),
            tokens: w.tokens,
            budget,
        });
    }

    let mut sentences: Vec<&[Word]> = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if w.ends_sentence || i + 1 == words.len() {
            sentences.push(&words[start..=i]);
            start = i + 1;
        }
    }

    let mut spans = Vec::new();
    let mut current: Option<Span> = None;
    let extend = |current: &mut Option<Span>, spans: &mut Vec<Span>, range: Range<usize>, tokens: usize| {
        match current {
            Some(cur) if cur.tokens + tokens <= budget => {
                cur.range.end = range.end;
                cur.tokens += tokens;
            }
            _ => {
                if let Some(done) = current.take() {
                    spans.push(done);
                }
                *current = Some(Span { range, tokens });
            }
        }
    };

    for sentence in sentences {
        let tokens: usize = sentence.iter().map(|w| w.tokens).sum();
        if tokens <= budget {
            let range = sentence[0].range.start..sentence[sentence.len() - 1].range.end;
            extend(&mut current, &mut spans, range, tokens);
        } else {
            if let Some(done) = current.take() {
                spans.push(done);
            }
            for w in sentence {
                extend(&mut current, &mut spans, w.range.clone(), w.tokens);
            }
        }
    }
    spans.extend(current);
    Ok(spans)
}

/// Chunks keyed by id, as written by `kar ingest`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkStore {
    chunks: BTreeMap<ChunkId, SubDocument>,
}

impl ChunkStore {
    pub fn new(chunks: impl IntoIterator<Item = SubDocument>) -> Result<Self> {
        let mut store = Self::default();
        store.extend(chunks)?;
        Ok(store)
    }

    pub fn extend(&mut self, chunks: impl IntoIterator<Item = SubDocument>) -> Result<()> {
        for chunk in chunks {
            if self.chunks.contains_key(&chunk.chunk_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate chunk id {}",
                    chunk.chunk_id
                )));
            }
            self.chunks.insert(chunk.chunk_id.clone(), chunk);
        }
        Ok(())
    }

    pub fn get(&self, id: &ChunkId) -> Option<&SubDocument> {
        self.chunks.get(id)
    }

    pub fn contains_doc(&self, doc_id: &str) -> bool {
        self.chunks.values().any(|c| c.doc_id == doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubDocument> {
        self.chunks.values()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn to_vec(&self) -> Vec<SubDocument> {
        self.chunks.values().cloned().collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(read_jsonl(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, self.chunks.values()).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Writes one JSON object per chunk per line.
pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    chunks: impl IntoIterator<Item = &'a SubDocument>,
) -> std::io::Result<()> {
    for chunk in chunks {
        serde_json::to_writer(&mut out, chunk)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SubDocument>> {
    let mut chunks = Vec::new();
    let mut offset = 0;
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<chunks>", e))?;
        if !line.trim().is_empty() {
            let chunk = serde_json::from_str(&line).map_err(|e| {
                let mut err = Error::json("chunks", &line, &e);
                if let Error::Parse { offset: o, .. } = &mut err {
                    *o += offset;
                }
                err
            })?;
            chunks.push(chunk);
        }
        offset += line.len() + 1;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section(path: &[&str], body: &str) -> Section {
        Section {
            heading_path: path.iter().map(|s| s.to_string()).collect(),
            body: body.to_string(),
        }
    }

    #[test]
    fn nested_markdown_headings() {
        let doc = parse_document("d", b"# A\ntext1\n## B\ntext2", SourceFormat::Markdown).unwrap();
        assert_eq!(doc.sections, vec![section(&["A"], "text1"), section(&["A", "B"], "text2")]);
        assert_eq!(doc.title, "A");
    }

    #[test]
    fn no_headings_is_one_section() {
        let doc = parse_document("d", b"no headings at all", SourceFormat::Markdown).unwrap();
        assert_eq!(doc.sections, vec![section(&[], "no headings at all")]);
        assert_eq!(doc.title, "d");
    }

    #[test]
    fn empty_and_invalid_input() {
        assert!(matches!(
            parse_document("d", b"", SourceFormat::Markdown),
            Err(Error::EmptyDocument)
        ));
        assert!(matches!(
            parse_document("d", b"  \n\n", SourceFormat::Plaintext),
            Err(Error::EmptyDocument)
        ));
        assert!(matches!(
            parse_document("d", &[0x66, 0xff, 0xfe], SourceFormat::Markdown),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn headings_inside_code_fences_are_body() {
        let raw = "# A\n```\n# not a heading\n```\nafter";
        let doc = parse_document("d", raw.as_bytes(), SourceFormat::Markdown).unwrap();
        assert_eq!(doc.sections.len(), 1);
        assert!(doc.sections[0].body.contains("# not a heading"));
    }

    #[test]
    fn atx_edge_cases() {
        assert_eq!(atx_heading("## Title ##\n"), Some((2, "Title")));
        assert_eq!(atx_heading("#hashtag"), None);
        assert_eq!(atx_heading("    # indented code"), None);
        assert_eq!(atx_heading("#"), None);
        assert_eq!(atx_heading("####### seven"), None);
        assert_eq!(atx_heading("# C# language"), Some((1, "C# language")));
    }

    #[test]
    fn plaintext_markers() {
        let raw = "intro\n= Top =\nbody\n== Sub ==\nmore\n=== Deep\nlast";
        let doc = parse_document("p", raw.as_bytes(), SourceFormat::Plaintext).unwrap();
        let paths: Vec<_> = doc.sections.iter().map(|s| s.heading_path.clone()).collect();
        assert_eq!(
            paths,
            vec![
                vec![],
                vec!["Top".to_string()],
                vec!["Top".to_string(), "Sub".to_string()],
                vec!["Top".to_string(), "Sub".to_string(), "Deep".to_string()],
            ]
        );
    }

    #[test]
    fn token_counts() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("hello world"), 2);
        assert_eq!(count_tokens("position-rank, ok"), 5);
        assert_eq!(count_tokens("naïve café"), 2);
    }

    #[test]
    fn chunk_id_order_follows_reading_order() {
        let a: ChunkId = "doc#2".parse().unwrap();
        let b: ChunkId = "doc#10".parse().unwrap();
        assert!(a < b);
        assert_eq!(b.to_string(), "doc#10");
        let odd: ChunkId = "a#b#3".parse().unwrap();
        assert_eq!(odd.doc_id, "a#b");
    }

    #[test]
    fn small_section_is_one_chunk() {
        let doc = Document {
            doc_id: "d".into(),
            title: "t".into(),
            sections: vec![section(&["H"], "one two three four five six seven eight nine ten")],
        };
        let chunks = chunk_document(&doc, 100).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 10);
        assert_eq!(chunks[0].heading_path, vec!["H".to_string()]);
    }

    #[test]
    fn sections_are_never_merged() {
        let doc = Document {
            doc_id: "d".into(),
            title: "t".into(),
            sections: vec![section(&["A"], "alpha beta."), section(&["B"], "gamma delta.")],
        };
        let chunks = chunk_document(&doc, 100).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "alpha beta.");
        assert_eq!(chunks[1].text, "gamma delta.");
        assert_eq!(chunks[1].chunk_id, ChunkId::new("d", 1));
    }

    #[test]
    fn sentence_boundaries_preferred() {
        // Two sentences of 10 tokens each (9 words + '.'), budget 16: each gets its own chunk.
        let s1 = "a b c d e f g h i.";
        let s2 = "j k l m n o p q r.";
        let doc = Document {
            doc_id: "d".into(),
            title: "t".into(),
            sections: vec![section(&[], &format!("{s1} {s2}"))],
        };
        let chunks = chunk_document(&doc, 16).unwrap();
        let texts: Vec<_> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec![s1, s2]);
    }

    #[test]
    fn unsplittable_word() {
        let word = "-".repeat(20);
        let doc = Document {
            doc_id: "d".into(),
            title: "t".into(),
            sections: vec![section(&[], &format!("ok {word} ok"))],
        };
        assert!(matches!(
            chunk_document(&doc, 16),
            Err(Error::UnsplittableToken { tokens: 20, .. })
        ));
        assert!(matches!(chunk_document(&doc, 8), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let doc = parse_document("d", b"# A\nsome text here", SourceFormat::Markdown).unwrap();
        let chunks = chunk_document(&doc, 64).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &chunks).unwrap();
        let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["chunk_id", "doc_id", "heading_path", "text", "token_count"]);
        assert_eq!(value["chunk_id"], "d#0");
        assert_eq!(read_jsonl(&buf[..]).unwrap(), chunks);
    }
}
