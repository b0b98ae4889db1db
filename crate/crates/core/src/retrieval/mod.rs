//! Document retrieval: an in-process BM25 index and a client for external
//! retrieval services, both behind [`Retriever`].

mod bm25;
mod external;

use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

pub use bm25::{Bm25Params, CorpusIndex, ScoredDoc};
pub use external::{ExternalRetriever, HttpMethod};

use crate::types::Document;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("query has no indexable terms")]
    EmptyQuery,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed retriever response: {0}")]
    MalformedResponse(String),
    #[error("corpus line {line}: {message}")]
    CorpusLine { line: usize, message: String },
    #[error("index cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Retriever: Send + Sync {
    /// Ranked documents for `query`, at most `top_k`, with `rank` set 1..n.
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError>;
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Reads a JSON Lines corpus (`{id, title, body}` per line). Blank lines are
/// skipped; errors carry the 1-based line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, RetrievalError> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut docs = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document =
            serde_json::from_str(&line).map_err(|e| RetrievalError::CorpusLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        doc.rank = None;
        doc.validate().map_err(|e| RetrievalError::CorpusLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_and_lowercases() {
        assert_eq!(
            tokenize("LIDF (London) -- March&April, 2017!"),
            vec!["lidf", "london", "march", "april", "2017"]
        );
        assert_eq!(tokenize("Émile Zola's"), vec!["émile", "zola", "s"]);
        assert!(tokenize(" ?! ").is_empty());
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"title\":\"\",\"body\":\"x\"}\n\n{\"id\":\"b\",\"title\":\"t\"}\n",
        )
        .unwrap();
        match load_corpus(&path) {
            Err(RetrievalError::CorpusLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
