//! Okapi BM25 over an in-memory inverted index.
//!
//! score(D, Q) = sum over query tokens t of
//!   idf(t) * tf(t, D) * (k1 + 1) / (tf(t, D) + k1 * (1 - b + b * |D| / avgdl))
//! with idf(t) = ln((N - n(t) + 0.5) / (n(t) + 0.5) + 1), which is always
//! positive. Repeated query tokens contribute once per occurrence.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, RetrievalError, Retriever};
use crate::par;
use crate::types::Document;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc<'a> {
    pub doc: &'a Document,
    pub score: f64,
}

const CACHE_MAGIC: &[u8; 8] = b"HGBM25\x00\x01";

/// Immutable BM25 index. Documents are stored sorted by id, so the index
/// does not depend on input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    documents: Vec<Document>,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
}

impl CorpusIndex {
    pub fn build(corpus: Vec<Document>) -> Result<Self, RetrievalError> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(mut corpus: Vec<Document>, params: Bm25Params) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if !params.k1.is_finite() || params.k1 <= 0.0 || !(0.0..=1.0).contains(&params.b) {
            return Err(RetrievalError::InvalidDocument(format!(
                "bad BM25 parameters k1={} b={}",
                params.k1, params.b
            )));
        }
        let mut seen = HashSet::with_capacity(corpus.len());
        for d in &corpus {
            if !seen.insert(d.id.as_str()) {
                return Err(RetrievalError::DuplicateDocId(d.id.clone()));
            }
            d.validate()
                .map_err(|e| RetrievalError::InvalidDocument(e.to_string()))?;
        }
        drop(seen);
        corpus.sort_by(|a, b| a.id.cmp(&b.id));

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (i, doc) in corpus.iter_mut().enumerate() {
            doc.rank = None;
            let tokens = tokenize(&index_text(doc));
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        if avg_doc_length <= 0.0 {
            return Err(RetrievalError::InvalidDocument(
                "corpus contains no indexable terms".into(),
            ));
        }
        Ok(Self {
            documents: corpus,
            postings,
            doc_lengths,
            avg_doc_length,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.position(id).map(|i| self.doc_lengths[i])
    }

    /// `(doc id, term frequency)` pairs for a term, ordered by doc id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.documents[p.doc as usize].id.as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
    }

    fn idf(&self, doc_freq: usize) -> f64 {
        let n = self.documents.len() as f64;
        let df = doc_freq as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scored documents, best first, zero-score documents excluded.
    pub fn search(&self, query: &str, top_k: usize) -> Result<Vec<ScoredDoc<'_>>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let terms = tokenize(query);
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let tf = p.tf as f64;
                let len_ratio = self.doc_lengths[p.doc as usize] as f64 / self.avg_doc_length;
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio));
                *scores.entry(p.doc).or_default() += s;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        // documents are sorted by id, so index order is id order
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(ranked
            .into_iter()
            .map(|(i, score)| ScoredDoc {
                doc: &self.documents[i as usize],
                score,
            })
            .collect())
    }

    /// Runs many queries; results keep query order. Parallel when the
    /// `parallel` feature is on.
    pub fn retrieve_batch(
        &self,
        queries: &[String],
        top_k: usize,
    ) -> Vec<Result<Vec<Document>, RetrievalError>> {
        par::map_ordered(queries, |q| self.retrieve(q, top_k))
    }

    pub fn retrieve_batch_sequential(
        &self,
        queries: &[String],
        top_k: usize,
    ) -> Vec<Result<Vec<Document>, RetrievalError>> {
        queries.iter().map(|q| self.retrieve(q, top_k)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut bytes = CACHE_MAGIC.to_vec();
        serde_json::to_writer(&mut bytes, self).map_err(|e| RetrievalError::Cache(e.to_string()))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let bytes = std::fs::read(path)?;
        let body = bytes
            .strip_prefix(CACHE_MAGIC.as_slice())
            .ok_or_else(|| RetrievalError::Cache("not an index cache file".into()))?;
        serde_json::from_slice(body).map_err(|e| RetrievalError::Cache(e.to_string()))
    }
}

fn index_text(doc: &Document) -> String {
    if doc.title.is_empty() {
        doc.body.clone()
    } else {
        format!("{} {}", doc.title, doc.body)
    }
}

impl Retriever for CorpusIndex {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        Ok(self
            .search(query, top_k)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.doc.clone().with_rank(i as u32 + 1))
            .collect())
    }
}
