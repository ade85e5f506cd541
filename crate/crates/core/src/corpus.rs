//! The persisted artifacts of one corpus: chunk texts, keyword index and
//! vector store, kept consistent with each other.

use std::path::{Path, PathBuf};

use crate::baseline::{build_store, VectorStore};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::index::{build_index, KeywordIndex};
use crate::ingest::{chunk_document, parse_document, ChunkStore, SourceFormat};
use crate::keywords::KeywordExtractor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub chunks: PathBuf,
    pub index: PathBuf,
    pub store: PathBuf,
}

impl CorpusPaths {
    /// `chunks.jsonl`, `index.json` and `store.json` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            chunks: dir.join("chunks.jsonl"),
            index: dir.join("index.json"),
            store: dir.join("store.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub chunks: ChunkStore,
    pub index: KeywordIndex,
    pub store: VectorStore,
}

/// What one ingest call added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub doc_id: String,
    pub chunk_count: usize,
}

impl Corpus {
    pub fn empty(extractor: &KeywordExtractor, embedder: &dyn Embedder, budget: usize) -> Result<Self> {
        Ok(Self {
            chunks: ChunkStore::default(),
            index: build_index(&[], extractor, budget)?,
            store: VectorStore::new(embedder.dimension(), embedder.id()),
        })
    }

    /// Loads all three artifacts, or starts empty when none exist yet.
    pub fn open(
        paths: &CorpusPaths,
        extractor: &KeywordExtractor,
        embedder: &dyn Embedder,
        budget: usize,
    ) -> Result<Self> {
        let present = [&paths.chunks, &paths.index, &paths.store].map(|p| p.exists());
        if present.iter().all(|p| !p) {
            return Self::empty(extractor, embedder, budget);
        }
        if !present.iter().all(|p| *p) {
            return Err(Error::Corrupt {
                what: "corpus".into(),
                message: "chunks, index and store must either all exist or all be absent".into(),
            });
        }
        let corpus = Self {
            chunks: ChunkStore::load(&paths.chunks)?,
            index: KeywordIndex::load(&paths.index)?,
            store: VectorStore::load(&paths.store)?,
        };
        if corpus.index.len() != corpus.chunks.len() || corpus.store.len() != corpus.chunks.len() {
            return Err(Error::Corrupt {
                what: "corpus".into(),
                message: format!(
                    "{} chunks but {} indexed and {} embedded",
                    corpus.chunks.len(),
                    corpus.index.len(),
                    corpus.store.len()
                ),
            });
        }
        Ok(corpus)
    }

    /// Writes each artifact to a temporary file and renames it into place.
    pub fn save(&self, paths: &CorpusPaths) -> Result<()> {
        fn tmp(path: &Path) -> PathBuf {
            let mut name = path.file_name().unwrap_or_default().to_os_string();
            name.push(".tmp");
            path.with_file_name(name)
        }
        for p in [&paths.chunks, &paths.index, &paths.store] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        self.chunks.save(tmp(&paths.chunks))?;
        self.index.save(tmp(&paths.index))?;
        self.store.save(tmp(&paths.store))?;
        for p in [&paths.chunks, &paths.index, &paths.store] {
            std::fs::rename(tmp(p), p).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    /// Parses, chunks, indexes and embeds a new document, returning the
    /// extended corpus. `self` is left untouched.
    pub fn ingest(
        &self,
        doc_id: &str,
        raw: &[u8],
        format: SourceFormat,
        budget: usize,
        extractor: &KeywordExtractor,
        embedder: &dyn Embedder,
    ) -> Result<(Corpus, Ingested)> {
        if self.chunks.contains_doc(doc_id) {
            return Err(Error::DuplicateDocument(doc_id.to_string()));
        }
        let doc = parse_document(doc_id, raw, format)?;
        let chunks = chunk_document(&doc, budget)?;
        let index = self.index.merged(&build_index(&chunks, extractor, budget)?)?;
        let store = self.store.merged(&build_store(&chunks, embedder)?)?;
        let ingested = Ingested {
            doc_id: doc_id.to_string(),
            chunk_count: chunks.len(),
        };
        let mut all = self.chunks.clone();
        all.extend(chunks)?;
        Ok((
            Corpus {
                chunks: all,
                index,
                store,
            },
            ingested,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;
    use crate::keywords::ExtractorConfig;
    use std::sync::Arc;

    #[test]
    fn ingest_save_open() {
        let dir = tempfile::tempdir().unwrap();
        let paths = CorpusPaths::in_dir(dir.path().join("c"));
        let embedder = MockEmbedder::new(8);
        let extractor = KeywordExtractor::new(ExtractorConfig::default(), Arc::new(MockEmbedder::new(8)));

        let empty = Corpus::open(&paths, &extractor, &embedder, 64).unwrap();
        assert!(empty.chunks.is_empty());

        let (corpus, added) = empty
            .ingest("a", b"# A\nAlpha text.\n# B\nBeta text.", SourceFormat::Markdown, 64, &extractor, &embedder)
            .unwrap();
        assert_eq!(added.chunk_count, 2);
        assert!(matches!(
            corpus.ingest("a", b"x", SourceFormat::Markdown, 64, &extractor, &embedder),
            Err(Error::DuplicateDocument(_))
        ));
        corpus.save(&paths).unwrap();
        assert_eq!(Corpus::open(&paths, &extractor, &embedder, 64).unwrap(), corpus);

        std::fs::remove_file(&paths.store).unwrap();
        assert!(matches!(
            Corpus::open(&paths, &extractor, &embedder, 64),
            Err(Error::Corrupt { .. })
        ));
    }
}
