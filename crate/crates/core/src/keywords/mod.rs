//! Keyword extraction: n-gram candidates scored against the source text with
//! an embedder, then picked by maximal marginal relevance (MMR).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::embed::{cosine_or_zero, Embedder};
use crate::error::{Error, Result, Stage};

pub const DEFAULT_CHUNK_KEYWORDS: usize = 10;
pub const DEFAULT_QUERY_KEYWORDS: usize = 5;
pub const DEFAULT_DIVERSITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub phrase: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordOrigin {
    Chunk,
    Query,
    Heading,
}

/// Keywords sorted by descending weight, ties by phrase; phrases are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    keywords: Vec<Keyword>,
    origin: KeywordOrigin,
}

impl KeywordSet {
    /// Normalizes ordering and merges duplicate phrases, keeping the larger weight.
    pub fn new(keywords: impl IntoIterator<Item = Keyword>, origin: KeywordOrigin) -> Self {
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        for kw in keywords {
            let w = kw.weight.clamp(0.0, 1.0);
            merged
                .entry(kw.phrase)
                .and_modify(|cur| *cur = cur.max(w))
                .or_insert(w);
        }
        let mut keywords: Vec<Keyword> = merged
            .into_iter()
            .map(|(phrase, weight)| Keyword { phrase, weight })
            .collect();
        keywords.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.phrase.cmp(&b.phrase)));
        Self { keywords, origin }
    }

    pub fn empty(origin: KeywordOrigin) -> Self {
        Self {
            keywords: Vec::new(),
            origin,
        }
    }

    /// Builds a set from raw phrases with weight 1.0, normalizing each and
    /// dropping those that normalize to nothing.
    pub fn from_phrases<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>, origin: KeywordOrigin) -> Self {
        Self::new(
            phrases
                .into_iter()
                .filter_map(|p| normalize_phrase(p.as_ref()).ok())
                .map(|phrase| Keyword { phrase, weight: 1.0 }),
            origin,
        )
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    pub fn origin(&self) -> KeywordOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().map(|k| k.phrase.as_str())
    }

    pub fn weight(&self, phrase: &str) -> Option<f64> {
        self.keywords.iter().find(|k| k.phrase == phrase).map(|k| k.weight)
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.weight(phrase).is_some()
    }

    /// True when the set satisfies its ordering, uniqueness and range invariants.
    pub fn is_well_formed(&self) -> bool {
        let unique = self.phrases().collect::<HashSet<_>>().len() == self.len();
        let sorted = self.keywords.windows(2).all(|w| {
            w[0].weight > w[1].weight || (w[0].weight == w[1].weight && w[0].phrase < w[1].phrase)
        });
        let ranged = self
            .keywords
            .iter()
            .all(|k| (0.0..=1.0).contains(&k.weight) && normalize_phrase(&k.phrase).is_ok_and(|n| n == k.phrase));
        unique && sorted && ranged
    }
}

/// Lowercase, NFC, edge punctuation stripped per word, single spaces.
pub fn normalize_phrase(raw: &str) -> Result<String> {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase().nfc().collect();
    let words: Vec<&str> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyPhrase);
    }
    Ok(words.join(" "))
}

/// The fixed English stopword list shipped with the crate.
pub fn english_stopwords() -> &'static HashSet<String> {
    static WORDS: OnceLock<HashSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| {
        include_str!("stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    })
}

/// Word n-grams whose first and last words are not stopwords, shortest
/// n-grams first and otherwise in order of first occurrence.
pub fn generate_candidates(
    text: &str,
    ngram_min: usize,
    ngram_max: usize,
    stopwords: &HashSet<String>,
) -> Result<Vec<String>> {
    if !(1 <= ngram_min && ngram_min <= ngram_max && ngram_max <= 3) {
        return Err(Error::InvalidArgument(format!(
            "n-gram range must satisfy 1 <= min <= max <= 3, got ({ngram_min}, {ngram_max})"
        )));
    }
    let words: Vec<String> = text
        .split_whitespace()
        .filter_map(|w| normalize_phrase(w).ok())
        .collect();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for n in ngram_min..=ngram_max {
        for window in words.windows(n) {
            if stopwords.contains(&window[0]) || stopwords.contains(&window[n - 1]) {
                continue;
            }
            let phrase = window.join(" ");
            if seen.insert(phrase.clone()) {
                out.push(phrase);
            }
        }
    }
    Ok(out)
}

/// Greedy MMR over precomputed similarities; returns candidate indices in
/// selection order.
///
/// The first pick maximizes relevance. Each later pick maximizes
/// `(1 - diversity) * relevance - diversity * max_sim_to_selected`.
/// Exact score ties go to the lexicographically smaller label.
pub fn mmr_select(
    relevance: &[f64],
    similarity: impl Fn(usize, usize) -> f64,
    labels: &[&str],
    k: usize,
    diversity: f64,
) -> Vec<usize> {
    debug_assert_eq!(relevance.len(), labels.len());
    let mut remaining: Vec<usize> = (0..relevance.len()).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(k.min(relevance.len()));
    while selected.len() < k && !remaining.is_empty() {
        let score = |c: usize| {
            if selected.is_empty() {
                relevance[c]
            } else {
                let redundancy = selected
                    .iter()
                    .map(|&s| similarity(c, s))
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 - diversity) * relevance[c] - diversity * redundancy
            }
        };
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &c)| (pos, (score(c), c)))
            .max_by(|(_, (sa, a)), (_, (sb, b))| match sa.total_cmp(sb) {
                Ordering::Equal => labels[*b].cmp(labels[*a]),
                other => other,
            })
            .expect("remaining is non-empty");
        selected.push(remaining.remove(pos));
    }
    selected
}

/// Picks up to `k` keywords from `candidates` by MMR against `text`.
///
/// Embeds the text and all candidates in one batch request. The keyword
/// weight is the candidate's cosine relevance clamped to `[0, 1]`.
pub fn select_keywords(
    text: &str,
    candidates: &[String],
    embedder: &dyn Embedder,
    k: usize,
    diversity: f64,
    origin: KeywordOrigin,
) -> Result<KeywordSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&diversity) {
        return Err(Error::InvalidArgument(format!("diversity must be in [0, 1], got {diversity}")));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no keyword candidates".into()));
    }
    let mut texts: Vec<&str> = Vec::with_capacity(candidates.len() + 1);
    texts.push(text);
    texts.extend(candidates.iter().map(String::as_str));
    let vectors = embedder
        .embed_batch(&texts)
        .map_err(|e| Error::provider(Stage::KeywordEmbedding, e))?;
    let (doc, cands) = vectors.split_first().expect("batch includes the text");

    let relevance: Vec<f64> = cands.iter().map(|c| cosine_or_zero(c, doc)).collect();
    let labels: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let picked = mmr_select(
        &relevance,
        |a, b| cosine_or_zero(&cands[a], &cands[b]),
        &labels,
        k,
        diversity,
    );
    Ok(KeywordSet::new(
        picked.into_iter().map(|i| Keyword {
            phrase: candidates[i].clone(),
            weight: relevance[i],
        }),
        origin,
    ))
}

/// Merges every heading in `heading_path` into a chunk's keywords at weight 1.0.
pub fn augment_with_headings(set: KeywordSet, heading_path: &[String]) -> KeywordSet {
    debug_assert_eq!(set.origin, KeywordOrigin::Chunk);
    if heading_path.is_empty() {
        return set;
    }
    let origin = set.origin;
    let headings = heading_path
        .iter()
        .filter_map(|h| normalize_phrase(h).ok())
        .map(|phrase| Keyword { phrase, weight: 1.0 });
    KeywordSet::new(set.keywords.into_iter().chain(headings), origin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub chunk_keywords: usize,
    pub query_keywords: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub diversity: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            chunk_keywords: DEFAULT_CHUNK_KEYWORDS,
            query_keywords: DEFAULT_QUERY_KEYWORDS,
            ngram_min: 1,
            ngram_max: 2,
            diversity: DEFAULT_DIVERSITY,
        }
    }
}

/// The keyword model: one extractor used for both chunks and queries.
#[derive(Clone)]
pub struct KeywordExtractor {
    config: ExtractorConfig,
    embedder: Arc<dyn Embedder>,
    stopwords: &'static HashSet<String>,
}

impl std::fmt::Debug for KeywordExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeywordExtractor")
            .field("config", &self.config)
            .field("embedder", &self.embedder.id())
            .finish()
    }
}

impl KeywordExtractor {
    pub fn new(config: ExtractorConfig, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            config,
            embedder,
            stopwords: english_stopwords(),
        }
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn extract(&self, text: &str, k: usize, origin: KeywordOrigin) -> Result<KeywordSet> {
        let candidates = generate_candidates(text, self.config.ngram_min, self.config.ngram_max, self.stopwords)?;
        if candidates.is_empty() {
            return Ok(KeywordSet::empty(origin));
        }
        select_keywords(text, &candidates, self.embedder.as_ref(), k, self.config.diversity, origin)
    }

    /// Chunk keywords, augmented with the chunk's heading path.
    pub fn extract_chunk(&self, text: &str, heading_path: &[String]) -> Result<KeywordSet> {
        let set = self.extract(text, self.config.chunk_keywords, KeywordOrigin::Chunk)?;
        Ok(augment_with_headings(set, heading_path))
    }

    pub fn extract_query(&self, query: &str) -> Result<KeywordSet> {
        self.extract(query, self.config.query_keywords, KeywordOrigin::Query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;

    fn kw(phrase: &str, weight: f64) -> Keyword {
        Keyword {
            phrase: phrase.into(),
            weight,
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_phrase("PageRank").unwrap(), "pagerank");
        assert_eq!(normalize_phrase("  Position-Rank  ").unwrap(), "position-rank");
        assert_eq!(normalize_phrase("ExpandRank,").unwrap(), "expandrank");
        assert_eq!(normalize_phrase("Page   \t Rank").unwrap(), "page rank");
        assert!(matches!(normalize_phrase(" ,;- "), Err(Error::EmptyPhrase)));
        // NFC: decomposed e + combining acute composes.
        assert_eq!(normalize_phrase("Cafe\u{301}").unwrap(), "caf\u{e9}");
    }

    #[test]
    fn candidates_hand_enumerated() {
        let stop: HashSet<String> = ["the".to_string()].into();
        let got = generate_candidates("the page rank algorithm", 1, 2, &stop).unwrap();
        assert_eq!(got, ["page", "rank", "algorithm", "page rank", "rank algorithm"]);
        assert!(generate_candidates("", 1, 3, &stop).unwrap().is_empty());
        assert!(generate_candidates("the the THE", 1, 3, &stop).unwrap().is_empty());
        assert!(generate_candidates("x", 0, 2, &stop).is_err());
        assert!(generate_candidates("x", 2, 4, &stop).is_err());
    }

    #[test]
    fn candidates_use_shipped_stopwords() {
        let got = generate_candidates(
            "tell me important facts about expandrank",
            1,
            2,
            english_stopwords(),
        )
        .unwrap();
        assert_eq!(got, ["tell", "important", "facts", "expandrank", "important facts"]);
    }

    #[test]
    fn keyword_set_orders_and_dedups() {
        let set = KeywordSet::new(
            [kw("b", 0.5), kw("a", 0.5), kw("c", 0.9), kw("a", 0.2)],
            KeywordOrigin::Chunk,
        );
        let phrases: Vec<_> = set.phrases().collect();
        assert_eq!(phrases, ["c", "a", "b"]);
        assert_eq!(set.weight("a"), Some(0.5));
        assert!(set.is_well_formed());
    }

    #[test]
    fn heading_augmentation() {
        let set = KeywordSet::new([kw("foo", 0.7)], KeywordOrigin::Chunk);
        let out = augment_with_headings(set.clone(), &["PageRank".to_string()]);
        assert_eq!(out.keywords(), &[kw("pagerank", 1.0), kw("foo", 0.7)]);

        let low = KeywordSet::new([kw("pagerank", 0.4), kw("foo", 0.7)], KeywordOrigin::Chunk);
        let out = augment_with_headings(low, &["PageRank".to_string()]);
        assert_eq!(out.weight("pagerank"), Some(1.0));
        assert_eq!(out.len(), 2);

        assert_eq!(augment_with_headings(set.clone(), &[]), set);
    }

    #[test]
    fn mmr_without_diversity_is_relevance_order() {
        let rel = [0.2, 0.9, 0.5, 0.9];
        let labels = ["d", "c", "b", "a"];
        let order = mmr_select(&rel, |_, _| 1.0, &labels, 4, 0.0);
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn select_returns_min_k_candidates() {
        let e = MockEmbedder::new(16);
        let cands: Vec<String> = ["alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
        let set = select_keywords("alpha beta gamma", &cands, &e, 10, 0.5, KeywordOrigin::Chunk).unwrap();
        assert_eq!(set.len(), 3);
        let set = select_keywords("alpha beta gamma", &cands, &e, 2, 0.5, KeywordOrigin::Chunk).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.is_well_formed());
    }

    #[test]
    fn embedder_failure_is_stage_tagged() {
        let e = MockEmbedder::new(4).failing();
        let err = select_keywords("x", &["x".to_string()], &e, 1, 0.5, KeywordOrigin::Query).unwrap_err();
        assert_eq!(err.stage_tag().as_deref(), Some("keyword-embedding"));
    }

    #[test]
    fn extractor_tags_origin() {
        let ex = KeywordExtractor::new(ExtractorConfig::default(), Arc::new(MockEmbedder::new(16)));
        let q = ex.extract_query("what is positionrank").unwrap();
        assert_eq!(q.origin(), KeywordOrigin::Query);
        assert!(q.contains("positionrank"));
        let empty = ex.extract_query("what is it").unwrap();
        assert!(empty.is_empty());
        let c = ex.extract_chunk("graph based ranking", &["PositionRank".into()]).unwrap();
        assert_eq!(c.weight("positionrank"), Some(1.0));
    }
}
