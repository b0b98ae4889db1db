//! Client for an external retrieval service (dense retriever, web search
//! proxy, ...). The service answers with `{"results": [{id, title, body, ...}]}`
//! in rank order; extra fields such as scores are ignored.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{RetrievalError, Retriever};
use crate::types::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HttpMethod {
    Get,
    #[default]
    Post,
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    results: Vec<SearchHit>,
}

#[derive(Deserialize)]
struct SearchHit {
    id: String,
    #[serde(default)]
    title: String,
    body: String,
}

#[derive(Debug, Clone)]
pub struct ExternalRetriever {
    endpoint: String,
    method: HttpMethod,
    http: reqwest::blocking::Client,
}

impl ExternalRetriever {
    pub fn new(endpoint: impl Into<String>, method: HttpMethod) -> Result<Self, RetrievalError> {
        Self::with_timeout(endpoint, method, Duration::from_secs(60))
    }

    pub fn with_timeout(
        endpoint: impl Into<String>,
        method: HttpMethod,
        timeout: Duration,
    ) -> Result<Self, RetrievalError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            method,
            http,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Retriever for ExternalRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let top_k_str = top_k.to_string();
        let req = match self.method {
            HttpMethod::Post => self.http.post(&self.endpoint).json(&SearchRequest { query, top_k }),
            HttpMethod::Get => self
                .http
                .get(&self.endpoint)
                .query(&[("query", query), ("top_k", top_k_str.as_str())]),
        };
        let resp = req
            .send()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(RetrievalError::Transport(format!("HTTP {status}")));
        }
        let text = resp
            .text()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let parsed: SearchResponse = serde_json::from_str(&text)
            .map_err(|e| RetrievalError::MalformedResponse(e.to_string()))?;
        parsed
            .results
            .into_iter()
            .take(top_k)
            .enumerate()
            .map(|(i, hit)| {
                let doc = Document {
                    id: hit.id,
                    title: hit.title,
                    body: hit.body,
                    rank: Some(i as u32 + 1),
                };
                doc.validate()
                    .map_err(|e| RetrievalError::MalformedResponse(e.to_string()))?;
                Ok(doc)
            })
            .collect()
    }
}
