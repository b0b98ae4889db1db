//! Run configuration: a TOML file merged under command-line flags.
//!
//! ```toml
//! [pipeline]
//! max_hops = 5
//! top_k = 10
//! batch_size = 3
//! retriever = "bm25"        # or "external"
//! strict_citation = false
//! concurrency = 4
//!
//! [pipeline.decoding]
//! temperature = 0.0
//! max_output_tokens = 1024
//!
//! [retrieval]
//! corpus = "corpus.jsonl"   # BM25 over a JSONL corpus ...
//! index = "corpus.idx"      # ... or a cache written by `hopground index`
//! url = "http://localhost:8000/search"
//! method = "post"           # or "get"
//!
//! [llm]
//! model = "gpt-3.5-turbo"
//! base_url = "https://api.openai.com/v1"   # OPENAI_BASE_URL overrides
//! script = "script.json"    # replay a scripted backend instead
//! timeout_secs = 120
//! max_attempts = 3
//! max_in_flight = 4
//!
//! [prompts]
//! dir = "templates"
//! deduction_examples = 2
//! doc_char_budget = 1500
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use hopground::llm::OpenAiConfig;
use hopground::retrieval::HttpMethod;
use hopground::{PipelineConfig, PromptOptions, PromptSet};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub retrieval: RetrievalSection,
    pub llm: LlmSection,
    pub prompts: PromptSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub method: HttpMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        let d = OpenAiConfig::default();
        Self {
            model: d.model,
            base_url: None,
            script: None,
            timeout_secs: d.timeout.as_secs(),
            max_attempts: d.max_attempts,
            max_in_flight: d.max_in_flight,
        }
    }
}

impl LlmSection {
    /// Client settings; the environment wins over the file for the base URL
    /// and is the only source of the API key.
    pub fn openai(&self, model: &str) -> OpenAiConfig {
        let mut c = OpenAiConfig {
            model: model.to_string(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_attempts: self.max_attempts,
            max_in_flight: self.max_in_flight,
            ..OpenAiConfig::default()
        };
        if let Some(url) = &self.base_url {
            c.base_url = url.clone();
        }
        c.from_env()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub deduction_examples: usize,
    pub doc_char_budget: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        let o = PromptOptions::default();
        Self {
            dir: None,
            deduction_examples: o.deduction_examples,
            doc_char_budget: o.doc_char_budget,
        }
    }
}

impl PromptSection {
    pub fn options(&self) -> PromptOptions {
        PromptOptions {
            deduction_examples: self.deduction_examples,
            doc_char_budget: self.doc_char_budget,
        }
    }

    pub fn load(&self) -> Result<PromptSet> {
        match &self.dir {
            Some(dir) => PromptSet::from_dir(dir, self.options())
                .with_context(|| format!("loading templates from {}", dir.display())),
            None => Ok(PromptSet::default().with_options(self.options())),
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.retrieval.corpus);
        fix(&mut self.retrieval.index);
        fix(&mut self.llm.script);
        fix(&mut self.prompts.dir);
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}
