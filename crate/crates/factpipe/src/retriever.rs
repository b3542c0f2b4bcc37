//! Passage retrieval over a local corpus.
//!
//! Snippets come from JSONL (`{"id", "title", "content"}`), optionally with a
//! precomputed-embedding sidecar `<corpus>.emb.jsonl` (`{"id", "vector"}`).
//! Ranking is cosine similarity when embeddings are available and Okapi BM25
//! otherwise; retrieval is an exhaustive score-and-sort, which is exact and
//! fast at desk scale. Ties break by ascending snippet id so ranked lists are
//! deterministic.
//!
//! Corpora at or above [`IngestOptions::cache_threshold`] snippets get a
//! versioned binary index file written beside the corpus, keyed by the corpus
//! digest; smaller corpora are rebuilt from JSONL each run.

use crate::hashing::sha256_file;
use crate::num::Real;
use serde::Deserialize;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// One passage of an external corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet<R> {
    pub id: String,
    pub title: Option<String>,
    pub content: String,
    pub embedding: Option<Vec<R>>,
}

/// Posting for one term: which snippet and how often.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: usize,
    pub term_frequency: usize,
}

/// One retrieved passage with its relevance score and 1-based rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSnippet<R> {
    pub snippet_id: String,
    pub score: R,
    pub rank: usize,
}

/// A query: claim text for lexical ranking, or a precomputed embedding for
/// cosine ranking.
#[derive(Debug, Clone)]
pub enum RetrievalQuery<'a, R> {
    Text(&'a str),
    Embedding(&'a [R]),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("cosine similarity is undefined for an all-zero vector")]
    ZeroVector,
    #[error("corpus has no embeddings; embedding queries need an embedded corpus")]
    NoEmbeddings,
    #[error("query embedding contains a non-finite value")]
    NonFinite,
}

/// Searchable index over a corpus: the snippets, an inverted term index for
/// BM25, and per-snippet lengths. Immutable after construction and safe for
/// unlimited concurrent readers.
#[derive(Debug, Clone)]
pub struct CorpusIndex<R> {
    snippets: Vec<Snippet<R>>,
    inverted: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    has_embeddings: bool,
    embedding_dim: Option<usize>,
    id_to_ordinal: HashMap<String, usize>,
    corpus_digest: Option<String>,
}

/// Lowercased, punctuation-stripped, whitespace-split terms.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl<R: Real> CorpusIndex<R> {
    /// Build an index over in-memory snippets. Ids must be unique, contents
    /// non-empty, and all embeddings share one finite-valued dimension.
    pub fn build(snippets: Vec<Snippet<R>>) -> Result<CorpusIndex<R>, IngestError> {
        let mut index = CorpusIndex {
            snippets: Vec::new(),
            inverted: HashMap::new(),
            doc_lengths: Vec::new(),
            avg_doc_length: 0.0,
            has_embeddings: false,
            embedding_dim: None,
            id_to_ordinal: HashMap::new(),
            corpus_digest: None,
        };
        for snippet in snippets {
            index.push_snippet(snippet, "<memory>", 0)?;
        }
        index.finish();
        Ok(index)
    }

    fn push_snippet(
        &mut self,
        snippet: Snippet<R>,
        path: &str,
        line: usize,
    ) -> Result<(), IngestError> {
        let malformed = |message: String| IngestError::Malformed {
            path: path.to_string(),
            line,
            message,
        };
        if snippet.content.is_empty() {
            return Err(malformed(format!("snippet '{}': empty content", snippet.id)));
        }
        if self
            .id_to_ordinal
            .contains_key(&snippet.id)
        {
            return Err(malformed(format!("duplicate snippet id '{}'", snippet.id)));
        }
        if let Some(embedding) = &snippet.embedding {
            if embedding.iter().any(|v| !v.is_finite()) {
                return Err(malformed(format!(
                    "snippet '{}': non-finite embedding value",
                    snippet.id
                )));
            }
            match self.embedding_dim {
                None => self.embedding_dim = Some(embedding.len()),
                Some(dim) if dim != embedding.len() => {
                    return Err(malformed(format!(
                        "snippet '{}': embedding dimension {} does not match corpus dimension {dim}",
                        snippet.id,
                        embedding.len()
                    )));
                }
                Some(_) => {}
            }
        }
        let ordinal = self.snippets.len();
        let terms = tokenize(&snippet.content);
        self.doc_lengths.push(terms.len());
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for term in &terms {
            *counts.entry(term.as_str()).or_insert(0) += 1;
        }
        for (term, term_frequency) in counts {
            self.inverted
                .entry(term.to_string())
                .or_default()
                .push(Posting {
                    ordinal,
                    term_frequency,
                });
        }
        self.id_to_ordinal.insert(snippet.id.clone(), ordinal);
        self.snippets.push(snippet);
        Ok(())
    }

    fn finish(&mut self) {
        for postings in self.inverted.values_mut() {
            postings.sort_unstable_by_key(|p| p.ordinal);
        }
        self.avg_doc_length = if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.doc_lengths.iter().sum::<usize>() as f64 / self.doc_lengths.len() as f64
        };
        self.has_embeddings =
            !self.snippets.is_empty() && self.snippets.iter().all(|s| s.embedding.is_some());
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippet(&self, ordinal: usize) -> &Snippet<R> {
        &self.snippets[ordinal]
    }

    pub fn snippet_by_id(&self, id: &str) -> Option<&Snippet<R>> {
        self.id_to_ordinal.get(id).map(|&o| &self.snippets[o])
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.inverted.get(term).map(Vec::as_slice)
    }

    pub fn doc_length(&self, ordinal: usize) -> usize {
        self.doc_lengths[ordinal]
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn has_embeddings(&self) -> bool {
        self.has_embeddings
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn corpus_digest(&self) -> Option<&str> {
        self.corpus_digest.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Snippet count at which the index is cached to a binary file beside
    /// the corpus.
    pub cache_threshold: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            cache_threshold: 100_000,
        }
    }
}

#[derive(Deserialize)]
struct SnippetRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

/// Ingest one corpus file (plus its embedding sidecar, if present) with
/// default options.
pub fn ingest_corpus<R: Real>(path: &Path) -> Result<CorpusIndex<R>, IngestError> {
    ingest_corpora(std::slice::from_ref(&path.to_path_buf()), &IngestOptions::default())
}

/// Ingest one or more corpus files into a single index. With several files,
/// snippet ids are prefixed with their corpus file stem so they stay unique.
pub fn ingest_corpora<R: Real>(
    paths: &[PathBuf],
    options: &IngestOptions,
) -> Result<CorpusIndex<R>, IngestError> {
    if paths.len() == 1 {
        let digest = combined_digest(&paths[0])?;
        let cache_path = index_cache_path(&paths[0]);
        if let Some(index) = try_load_cache::<R>(&cache_path, &digest) {
            return Ok(index);
        }
        let mut index = ingest_into(CorpusIndex::empty(), &paths[0], None)?;
        index.finish();
        index.corpus_digest = Some(digest.clone());
        if index.len() >= options.cache_threshold {
            // Cache write failures are not fatal; the index is already built.
            let _ = write_cache(&cache_path, &digest, &index);
        }
        return Ok(index);
    }
    let mut index = CorpusIndex::empty();
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "corpus".to_string());
        let stem = stem.trim_end_matches(".jsonl").to_string();
        index = ingest_into(index, path, Some(&stem))?;
    }
    index.finish();
    Ok(index)
}

impl<R: Real> CorpusIndex<R> {
    fn empty() -> CorpusIndex<R> {
        CorpusIndex {
            snippets: Vec::new(),
            inverted: HashMap::new(),
            doc_lengths: Vec::new(),
            avg_doc_length: 0.0,
            has_embeddings: false,
            embedding_dim: None,
            id_to_ordinal: HashMap::new(),
            corpus_digest: None,
        }
    }
}

fn ingest_into<R: Real>(
    mut index: CorpusIndex<R>,
    path: &Path,
    id_prefix: Option<&str>,
) -> Result<CorpusIndex<R>, IngestError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let before = index.len();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SnippetRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let id = match id_prefix {
            Some(prefix) => format!("{prefix}:{}", record.id),
            None => record.id,
        };
        index.push_snippet(
            Snippet {
                id,
                title: record.title,
                content: record.content,
                embedding: None,
            },
            &display,
            i + 1,
        )?;
    }

    let sidecar = embedding_sidecar_path(path);
    if sidecar.exists() {
        let display = sidecar.display().to_string();
        let file = std::fs::File::open(&sidecar).map_err(|source| IngestError::Io {
            path: display.clone(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut dim: Option<usize> = index.embedding_dim;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| IngestError::Io {
                path: display.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                    path: display.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let malformed = |message: String| IngestError::Malformed {
                path: display.clone(),
                line: i + 1,
                message,
            };
            match dim {
                None => dim = Some(record.vector.len()),
                Some(d) if d != record.vector.len() => {
                    return Err(malformed(format!(
                        "embedding dimension {} does not match corpus dimension {d}",
                        record.vector.len()
                    )));
                }
                Some(_) => {}
            }
            if record.vector.iter().any(|v| !v.is_finite()) {
                return Err(malformed("non-finite embedding value".to_string()));
            }
            let id = match id_prefix {
                Some(prefix) => format!("{prefix}:{}", record.id),
                None => record.id,
            };
            let ordinal = *index
                .id_to_ordinal
                .get(&id)
                .ok_or_else(|| malformed(format!("embedding for unknown snippet id '{id}'")))?;
            if ordinal < before {
                return Err(malformed(format!(
                    "embedding for snippet '{id}' from a different corpus file"
                )));
            }
            index.snippets[ordinal].embedding = Some(
                record
                    .vector
                    .iter()
                    .map(|&v| R::from_f64_lossy(v))
                    .collect(),
            );
        }
        index.embedding_dim = dim;
    }
    Ok(index)
}

fn embedding_sidecar_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("emb.jsonl")
}

fn index_cache_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("idx")
}

fn combined_digest(corpus: &Path) -> Result<String, IngestError> {
    let mut digest = sha256_file(corpus).map_err(|source| IngestError::Io {
        path: corpus.display().to_string(),
        source,
    })?;
    let sidecar = embedding_sidecar_path(corpus);
    if sidecar.exists() {
        let sidecar_digest = sha256_file(&sidecar).map_err(|source| IngestError::Io {
            path: sidecar.display().to_string(),
            source,
        })?;
        digest = crate::hashing::sha256_hex(format!("{digest}{sidecar_digest}").as_bytes());
    }
    Ok(digest)
}

/// Okapi BM25 score of one snippet for the query's unique terms. Terms
/// absent from the corpus contribute zero; query term repetition is ignored.
pub fn bm25_score<R: Real>(
    index: &CorpusIndex<R>,
    query_terms: &[String],
    snippet_ordinal: usize,
) -> R {
    let n = index.len() as f64;
    let dl = index.doc_length(snippet_ordinal) as f64;
    let avgdl = index.avg_doc_length();
    let mut unique: Vec<&str> = query_terms.iter().map(String::as_str).collect();
    unique.sort_unstable();
    unique.dedup();

    let mut score = 0.0f64;
    for term in unique {
        let Some(postings) = index.postings(term) else {
            continue;
        };
        let df = postings.len() as f64;
        let tf = match postings.binary_search_by_key(&snippet_ordinal, |p| p.ordinal) {
            Ok(pos) => postings[pos].term_frequency as f64,
            Err(_) => continue,
        };
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let norm = (tf * (BM25_K1 + 1.0)) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
        score += idf * norm;
    }
    R::from_f64_lossy(score)
}

/// Cosine similarity of two equal-dimension, not-all-zero vectors, in
/// `[-1, 1]`.
pub fn cosine_score<R: Real>(a: &[R], b: &[R]) -> Result<R, ScoreError> {
    if a.len() != b.len() {
        return Err(ScoreError::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = R::zero();
    let mut norm_a = R::zero();
    let mut norm_b = R::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot = dot + x * y;
        norm_a = norm_a + x * x;
        norm_b = norm_b + y * y;
    }
    if norm_a.is_zero() || norm_b.is_zero() {
        return Err(ScoreError::ZeroVector);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// The k highest-scoring snippets for a query (all of them if the corpus is
/// smaller). Embedding queries use cosine similarity and require an embedded
/// corpus; text queries use BM25. Ties break by ascending snippet id.
pub fn retrieve_topk<R: Real>(
    index: &CorpusIndex<R>,
    query: &RetrievalQuery<'_, R>,
    k: usize,
) -> Result<Vec<ScoredSnippet<R>>, ScoreError> {
    if k == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(usize, R)> = match query {
        RetrievalQuery::Text(text) => {
            let terms = tokenize(text);
            (0..index.len())
                .map(|ordinal| (ordinal, bm25_score(index, &terms, ordinal)))
                .collect()
        }
        RetrievalQuery::Embedding(query_embedding) => {
            if !index.has_embeddings() {
                return Err(ScoreError::NoEmbeddings);
            }
            if query_embedding.iter().any(|v| !v.is_finite()) {
                return Err(ScoreError::NonFinite);
            }
            let mut scored = Vec::with_capacity(index.len());
            for ordinal in 0..index.len() {
                let embedding = index
                    .snippet(ordinal)
                    .embedding
                    .as_deref()
                    .expect("has_embeddings guarantees presence");
                scored.push((ordinal, cosine_score(query_embedding, embedding)?));
            }
            scored
        }
    };
    scored.sort_unstable_by(|(ord_a, score_a), (ord_b, score_b)| {
        score_b
            .partial_cmp(score_a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.snippet(*ord_a).id.cmp(&index.snippet(*ord_b).id))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (ordinal, score))| ScoredSnippet {
            snippet_id: index.snippet(ordinal).id.clone(),
            score,
            rank: i + 1,
        })
        .collect())
}

/// Concatenate retrieved snippets into a verification context: one block per
/// snippet in rank order, `Title: <title>` line when present, blocks
/// separated by blank lines.
pub fn build_context<R: Real>(scored: &[ScoredSnippet<R>], index: &CorpusIndex<R>) -> String {
    let mut blocks = Vec::with_capacity(scored.len());
    for entry in scored {
        let snippet = index
            .snippet_by_id(&entry.snippet_id)
            .expect("scored snippet id resolves in its index");
        match &snippet.title {
            Some(title) => blocks.push(format!("Title: {title}\n{}", snippet.content)),
            None => blocks.push(snippet.content.clone()),
        }
    }
    blocks.join("\n\n")
}

// ---- versioned binary index cache -------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"FPIX";
const CACHE_VERSION: u32 = 1;

fn try_load_cache<R: Real>(cache_path: &Path, expected_digest: &str) -> Option<CorpusIndex<R>> {
    let file = std::fs::File::open(cache_path).ok()?;
    let mut reader = BufReader::new(file);
    read_cache(&mut reader, expected_digest).ok()
}

fn read_cache<R: Real>(
    reader: &mut impl Read,
    expected_digest: &str,
) -> std::io::Result<CorpusIndex<R>> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    if read_u32(reader)? != CACHE_VERSION {
        return Err(bad("unsupported version"));
    }
    let digest = read_string(reader)?;
    if digest != expected_digest {
        return Err(bad("corpus digest mismatch"));
    }
    let count = read_u64(reader)? as usize;
    let mut snippets = Vec::with_capacity(count);
    for _ in 0..count {
        let id = read_string(reader)?;
        let has_title = read_u8(reader)? == 1;
        let title = if has_title {
            Some(read_string(reader)?)
        } else {
            None
        };
        let content = read_string(reader)?;
        let has_embedding = read_u8(reader)? == 1;
        let embedding = if has_embedding {
            let dim = read_u64(reader)? as usize;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(R::from_f64_lossy(read_f64(reader)?));
            }
            Some(vector)
        } else {
            None
        };
        snippets.push(Snippet {
            id,
            title,
            content,
            embedding,
        });
    }
    let mut index =
        CorpusIndex::build(snippets).map_err(|e| bad(&format!("cached snippets invalid: {e}")))?;
    index.corpus_digest = Some(digest);
    Ok(index)
}

fn write_cache<R: Real>(
    cache_path: &Path,
    digest: &str,
    index: &CorpusIndex<R>,
) -> std::io::Result<()> {
    let dir = cache_path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let w = tmp.as_file_mut();
        w.write_all(CACHE_MAGIC)?;
        write_u32(w, CACHE_VERSION)?;
        write_string(w, digest)?;
        write_u64(w, index.len() as u64)?;
        for snippet in &index.snippets {
            write_string(w, &snippet.id)?;
            match &snippet.title {
                Some(title) => {
                    write_u8(w, 1)?;
                    write_string(w, title)?;
                }
                None => write_u8(w, 0)?,
            }
            write_string(w, &snippet.content)?;
            match &snippet.embedding {
                Some(embedding) => {
                    write_u8(w, 1)?;
                    write_u64(w, embedding.len() as u64)?;
                    for v in embedding {
                        write_f64(w, v.to_f64().unwrap_or(0.0))?;
                    }
                }
                None => write_u8(w, 0)?,
            }
        }
        w.flush()?;
    }
    tmp.persist(cache_path).map_err(|e| e.error)?;
    Ok(())
}

fn read_u8(r: &mut impl Read) -> std::io::Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

fn write_u8(w: &mut impl Write, v: u8) -> std::io::Result<()> {
    w.write_all(&[v])
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snippet(id: &str, content: &str) -> Snippet<f64> {
        Snippet {
            id: id.into(),
            title: None,
            content: content.into(),
            embedding: None,
        }
    }

    fn embedded(id: &str, content: &str, embedding: &[f64]) -> Snippet<f64> {
        Snippet {
            id: id.into(),
            title: None,
            content: content.into(),
            embedding: Some(embedding.to_vec()),
        }
    }

    #[test]
    fn builds_index_with_average_length() {
        let index = CorpusIndex::build(vec![
            snippet("a", "one two three"),
            snippet("b", "four five"),
            snippet("c", "six"),
        ])
        .unwrap();
        assert_eq!(index.len(), 3);
        assert!((index.avg_doc_length() - 2.0).abs() < 1e-12);
        assert!(!index.has_embeddings());
    }

    #[test]
    fn rejects_duplicate_ids_and_mixed_dimensions() {
        let err = CorpusIndex::<f64>::build(vec![snippet("a", "x"), snippet("a", "y")]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = CorpusIndex::build(vec![
            embedded("a", "x", &[1.0, 0.0]),
            embedded("b", "y", &[1.0, 0.0, 0.0]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("dimension"));
    }

    #[test]
    fn no_overlap_scores_zero() {
        let index = CorpusIndex::build(vec![snippet("a", "alpha beta gamma")]).unwrap();
        let terms = tokenize("delta epsilon");
        assert_eq!(bm25_score::<f64>(&index, &terms, 0), 0.0);
    }

    #[test]
    fn single_doc_score_matches_hand_computation() {
        // Corpus: one snippet "the cat sat on the mat"; query: the same text.
        // Unique terms and frequencies: the:2, cat/sat/on/mat:1. With N = 1,
        // df = 1 the idf is ln(1 + 0.5/1.5) for every term, dl = avgdl wipes
        // the length normalization, so norm(tf) = tf*2.2/(tf + 1.2).
        let index = CorpusIndex::build(vec![snippet("a", "the cat sat on the mat")]).unwrap();
        let terms = tokenize("the cat sat on the mat");
        let idf = (1.0_f64 + 0.5 / 1.5).ln();
        let expected = idf * ((2.0 * 2.2) / (2.0 + 1.2) + 4.0 * (2.2 / 2.2));
        let got: f64 = bm25_score(&index, &terms, 0);
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn duplicate_snippets_score_identically() {
        let index = CorpusIndex::build(vec![
            snippet("a", "fever rest fluids"),
            snippet("a2", "fever rest fluids"),
        ])
        .unwrap();
        let terms = tokenize("fever fluids");
        let sa: f64 = bm25_score(&index, &terms, 0);
        let sb: f64 = bm25_score(&index, &terms, 1);
        assert_eq!(sa, sb);
    }

    #[test]
    fn cosine_identities() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let collinear: f64 = cosine_score(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((collinear - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_error_cases() {
        assert_eq!(
            cosine_score::<f64>(&[1.0], &[1.0, 2.0]).unwrap_err(),
            ScoreError::Dimension { left: 1, right: 2 }
        );
        assert_eq!(
            cosine_score::<f64>(&[0.0, 0.0], &[1.0, 2.0]).unwrap_err(),
            ScoreError::ZeroVector
        );
    }

    #[test]
    fn k_larger_than_corpus_returns_all() {
        let index = CorpusIndex::build(vec![
            snippet("a", "fever"),
            snippet("b", "fever rest"),
            snippet("c", "unrelated"),
        ])
        .unwrap();
        let results = retrieve_topk(&index, &RetrievalQuery::Text("fever"), 10).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(
            results.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let index = CorpusIndex::build(vec![
            snippet("zzz", "fever rest"),
            snippet("aaa", "fever rest"),
        ])
        .unwrap();
        let results = retrieve_topk(&index, &RetrievalQuery::Text("fever"), 2).unwrap();
        assert_eq!(results[0].snippet_id, "aaa");
        assert_eq!(results[1].snippet_id, "zzz");
    }

    #[test]
    fn topk_is_prefix_of_topk_plus_one() {
        let index = CorpusIndex::build(vec![
            snippet("a", "fever rest fluids"),
            snippet("b", "fever rest"),
            snippet("c", "fever"),
            snippet("d", "nothing relevant"),
        ])
        .unwrap();
        let q = RetrievalQuery::Text("fever rest fluids");
        let top2 = retrieve_topk(&index, &q, 2).unwrap();
        let top3 = retrieve_topk(&index, &q, 3).unwrap();
        for (a, b) in top2.iter().zip(top3.iter()) {
            assert_eq!(a.snippet_id, b.snippet_id);
        }
    }

    #[test]
    fn embedding_query_requires_embedded_corpus() {
        let index = CorpusIndex::build(vec![snippet("a", "text")]).unwrap();
        let err = retrieve_topk(&index, &RetrievalQuery::Embedding(&[1.0, 0.0]), 1).unwrap_err();
        assert_eq!(err, ScoreError::NoEmbeddings);
    }

    #[test]
    fn cosine_ranking_is_scale_invariant() {
        let snippets = vec![
            embedded("a", "x", &[0.9, 0.1, 0.0]),
            embedded("b", "y", &[0.1, 0.9, 0.3]),
            embedded("c", "z", &[0.5, 0.5, 0.5]),
        ];
        let scaled: Vec<Snippet<f64>> = snippets
            .iter()
            .map(|s| Snippet {
                embedding: s
                    .embedding
                    .as_ref()
                    .map(|e| e.iter().map(|v| v * 7.5).collect()),
                ..s.clone()
            })
            .collect();
        let index = CorpusIndex::build(snippets).unwrap();
        let scaled_index = CorpusIndex::build(scaled).unwrap();
        let query = [0.7, 0.2, 0.1];
        let ids = |index: &CorpusIndex<f64>| {
            retrieve_topk(index, &RetrievalQuery::Embedding(&query), 3)
                .unwrap()
                .into_iter()
                .map(|r| r.snippet_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&index), ids(&scaled_index));
    }

    #[test]
    fn build_context_formats_blocks_in_rank_order() {
        let index = CorpusIndex::build(vec![
            Snippet {
                id: "a".into(),
                title: Some("Fever care".into()),
                content: "Rest and fluids.".into(),
                embedding: None,
            },
            snippet("b", "Ice helps swelling."),
        ])
        .unwrap();
        assert_eq!(build_context::<f64>(&[], &index), "");
        let scored = vec![
            ScoredSnippet {
                snippet_id: "b".into(),
                score: 2.0,
                rank: 1,
            },
            ScoredSnippet {
                snippet_id: "a".into(),
                score: 1.0,
                rank: 2,
            },
        ];
        assert_eq!(
            build_context(&scored, &index),
            "Ice helps swelling.\n\nTitle: Fever care\nRest and fluids."
        );
    }

    #[test]
    fn ingest_reads_corpus_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("mini.jsonl");
        std::fs::write(
            &corpus,
            concat!(
                "{\"id\":\"s1\",\"title\":\"T\",\"content\":\"alpha beta\"}\n",
                "{\"id\":\"s2\",\"title\":null,\"content\":\"gamma\"}\n",
            ),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("mini.emb.jsonl"),
            "{\"id\":\"s1\",\"vector\":[1.0,0.0]}\n{\"id\":\"s2\",\"vector\":[0.0,1.0]}\n",
        )
        .unwrap();
        let index: CorpusIndex<f64> = ingest_corpus(&corpus).unwrap();
        assert_eq!(index.len(), 2);
        assert!(index.has_embeddings());
        assert_eq!(index.embedding_dim(), Some(2));
        assert!(index.corpus_digest().is_some());
    }

    #[test]
    fn ingest_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("bad.jsonl");
        std::fs::write(&corpus, "{\"id\":\"s1\",\"content\":\"ok\"}\nbroken\n").unwrap();
        let err = ingest_corpus::<f64>(&corpus).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let corpus2 = dir.path().join("dim.jsonl");
        std::fs::write(
            &corpus2,
            "{\"id\":\"a\",\"content\":\"x\"}\n{\"id\":\"b\",\"content\":\"y\"}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("dim.emb.jsonl"),
            "{\"id\":\"a\",\"vector\":[1.0,2.0]}\n{\"id\":\"b\",\"vector\":[1.0]}\n",
        )
        .unwrap();
        let err = ingest_corpus::<f64>(&corpus2).unwrap_err();
        match err {
            IngestError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn multi_corpus_ids_are_prefixed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("alpha.jsonl");
        let b = dir.path().join("beta.jsonl");
        std::fs::write(&a, "{\"id\":\"1\",\"content\":\"one\"}\n").unwrap();
        std::fs::write(&b, "{\"id\":\"1\",\"content\":\"uno\"}\n").unwrap();
        let index: CorpusIndex<f64> =
            ingest_corpora(&[a, b], &IngestOptions::default()).unwrap();
        assert!(index.snippet_by_id("alpha:1").is_some());
        assert!(index.snippet_by_id("beta:1").is_some());
    }

    #[test]
    fn index_cache_round_trips_and_detects_drift() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(
            &corpus,
            "{\"id\":\"a\",\"title\":\"T\",\"content\":\"alpha beta\"}\n{\"id\":\"b\",\"content\":\"gamma\"}\n",
        )
        .unwrap();
        let options = IngestOptions { cache_threshold: 1 };
        let built: CorpusIndex<f64> =
            ingest_corpora(std::slice::from_ref(&corpus), &options).unwrap();
        let cache = index_cache_path(&corpus);
        assert!(cache.exists(), "cache written at threshold");

        let loaded: CorpusIndex<f64> =
            ingest_corpora(std::slice::from_ref(&corpus), &options).unwrap();
        assert_eq!(loaded.len(), built.len());
        assert_eq!(loaded.snippet(0).title, built.snippet(0).title);
        assert_eq!(loaded.avg_doc_length(), built.avg_doc_length());

        // Change the corpus: digest mismatch forces a rebuild, not a stale read.
        std::fs::write(
            &corpus,
            "{\"id\":\"a\",\"content\":\"alpha beta\"}\n{\"id\":\"b\",\"content\":\"gamma\"}\n{\"id\":\"c\",\"content\":\"delta\"}\n",
        )
        .unwrap();
        let reloaded: CorpusIndex<f64> = ingest_corpora(&[corpus], &options).unwrap();
        assert_eq!(reloaded.len(), 3);
    }

    #[test]
    fn postings_match_brute_force_on_synthetic_corpus() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        let vocabulary = ["fever", "rest", "fluids", "ice", "pain", "sleep"];
        let mut snippets = Vec::new();
        for i in 0..1000 {
            let words: Vec<&str> = (0..rng.gen_range(1..8))
                .map(|_| vocabulary[rng.gen_range(0..vocabulary.len())])
                .collect();
            snippets.push(snippet(&format!("s{i:04}"), &words.join(" ")));
        }
        // Plant "zebra" in exactly 7 snippets.
        for i in [3, 141, 280, 444, 598, 701, 999] {
            snippets[i].content.push_str(" zebra");
        }
        let expected: usize = snippets
            .iter()
            .filter(|s| tokenize(&s.content).contains(&"zebra".to_string()))
            .count();
        assert_eq!(expected, 7);
        let index = CorpusIndex::build(snippets).unwrap();
        assert_eq!(index.postings("zebra").map(|p| p.len()), Some(7));
    }

    #[test]
    fn generic_scalar_instantiations_agree() {
        let contents = ["fever rest fluids", "fever rest", "nothing"];
        let f64_index: CorpusIndex<f64> = CorpusIndex::build(
            contents
                .iter()
                .enumerate()
                .map(|(i, c)| snippet(&format!("s{i}"), c))
                .collect(),
        )
        .unwrap();
        let f32_index: CorpusIndex<f32> = CorpusIndex::build(
            contents
                .iter()
                .enumerate()
                .map(|(i, c)| Snippet {
                    id: format!("s{i}"),
                    title: None,
                    content: c.to_string(),
                    embedding: None,
                })
                .collect(),
        )
        .unwrap();
        let terms = tokenize("fever fluids");
        let s64: f64 = bm25_score(&f64_index, &terms, 0);
        let s32: f32 = bm25_score(&f32_index, &terms, 0);
        assert!((s64 - f64::from(s32)).abs() < 1e-6);
    }
}
