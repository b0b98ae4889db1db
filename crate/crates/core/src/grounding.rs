//! Batch grounding of an immediate answer in retrieved documents.
//!
//! Documents are split into consecutive rank-order windows of `batch_size`.
//! Each window is shown to the model in turn; the first window that yields a
//! citation ends the phase. If every window answers Empty, the immediate
//! answer is kept unchanged.

use std::ops::Range;

use thiserror::Error;

use crate::llm::{LlmClient, LlmError};
use crate::prompts::{PromptError, PromptSet};
use crate::types::{DecodingParams, Document, GroundingOutcome, Question, TokenUsage};

/// Consecutive windows over `0..n_docs`; every window but the last has
/// exactly `batch_size` documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub windows: Vec<Range<usize>>,
}

impl BatchPlan {
    pub fn new(n_docs: usize, batch_size: usize) -> Self {
        let batch_size = batch_size.max(1);
        let windows = (0..n_docs)
            .step_by(batch_size)
            .map(|start| start..(start + batch_size).min(n_docs))
            .collect();
        Self {
            batch_size,
            windows,
        }
    }

    /// Windows as 1-based inclusive `(first, last)` pairs.
    pub fn one_based(&self) -> Vec<(usize, usize)> {
        self.windows.iter().map(|w| (w.start + 1, w.end)).collect()
    }
}

pub fn plan_batches(n_docs: usize, batch_size: usize) -> BatchPlan {
    BatchPlan::new(n_docs, batch_size)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed grounding output: {reason}")]
pub struct MalformedGrounding {
    pub reason: &'static str,
}

/// Spans of the first `<ref>..</ref>` and first `<revise>..</revise>` pairs,
/// tags matched ASCII case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagScan<'a> {
    pub reference: Option<&'a str>,
    pub revision: Option<&'a str>,
}

fn span_between<'a>(text: &'a str, lower: &str, open: &str, close: &str) -> Option<&'a str> {
    let start = lower.find(open)? + open.len();
    let end = lower[start..].find(close)? + start;
    Some(&text[start..end])
}

pub fn scan_tags(text: &str) -> TagScan<'_> {
    let lower = text.to_ascii_lowercase();
    TagScan {
        reference: span_between(text, &lower, "<ref>", "</ref>"),
        revision: span_between(text, &lower, "<revise>", "</revise>"),
    }
}

pub fn is_empty_signal(reference: &str) -> bool {
    reference.trim().eq_ignore_ascii_case("empty")
}

/// Trims surrounding whitespace and periods only.
pub fn clean_revision(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c == '.')
}

/// Parses a grounding completion into Cited or Empty.
pub fn parse_grounding(text: &str) -> Result<GroundingOutcome, MalformedGrounding> {
    let scan = scan_tags(text);
    let reference = scan.reference.ok_or(MalformedGrounding {
        reason: "no <ref>...</ref> span",
    })?;
    if is_empty_signal(reference) {
        return Ok(GroundingOutcome::empty(text));
    }
    let citation = reference.trim();
    if citation.is_empty() {
        return Err(MalformedGrounding {
            reason: "blank <ref> span",
        });
    }
    let revision = scan.revision.map(clean_revision).ok_or(MalformedGrounding {
        reason: "no <revise>...</revise> span",
    })?;
    if revision.is_empty() {
        return Err(MalformedGrounding {
            reason: "blank <revise> span",
        });
    }
    Ok(GroundingOutcome::cited(citation, revision, text))
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether the citation occurs (whitespace-normalized) in some document.
pub fn citation_supported(citation: &str, window: &[Document]) -> bool {
    let needle = normalize_ws(citation);
    window.iter().any(|d| {
        normalize_ws(&d.body).contains(&needle) || normalize_ws(&d.title).contains(&needle)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundOptions {
    pub batch_size: usize,
    pub strict_citation: bool,
    pub params: DecodingParams,
}

impl Default for GroundOptions {
    fn default() -> Self {
        Self {
            batch_size: 3,
            strict_citation: false,
            params: DecodingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundReport {
    pub revised_answer: String,
    pub outcome: GroundingOutcome,
    /// Windows shown to the model.
    pub batches_consumed: u32,
    /// Extra calls made to re-ask after malformed output.
    pub retries: u32,
    pub usage: TokenUsage,
}

impl GroundReport {
    pub fn llm_calls(&self) -> u32 {
        self.batches_consumed + self.retries
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A grounding phase that stopped on an error, with what it had spent.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundFailure {
    pub error: GroundError,
    pub usage: TokenUsage,
    /// LLM calls attempted, including the failing one.
    pub calls: u32,
}

pub fn ground(
    llm: &dyn LlmClient,
    prompts: &PromptSet,
    question: &Question,
    sub_question: &str,
    immediate_answer: &str,
    docs: &[Document],
    opts: &GroundOptions,
) -> Result<GroundReport, GroundFailure> {
    let plan = BatchPlan::new(docs.len(), opts.batch_size);
    let mut usage = TokenUsage::default();
    let mut retries = 0;
    let mut calls = 0;
    let mut last = GroundingOutcome::empty("");
    for (n, window) in plan.windows.iter().enumerate() {
        let batch = &docs[window.clone()];
        let messages = prompts
            .render_grounding(question, sub_question, immediate_answer, batch)
            .map_err(|e| GroundFailure {
                error: e.into(),
                usage,
                calls,
            })?;
        let mut outcome = None;
        for attempt in 0..2 {
            if attempt > 0 {
                retries += 1;
            }
            calls += 1;
            let completion = llm
                .complete(&messages, &opts.params)
                .map_err(|e| GroundFailure {
                    error: e.into(),
                    usage,
                    calls,
                })?;
            usage += TokenUsage {
                prompt_tokens: completion.prompt_tokens,
                completion_tokens: completion.completion_tokens,
            };
            match parse_grounding(&completion.text) {
                Ok(o) => {
                    outcome = Some(o);
                    break;
                }
                Err(e) => {
                    log::debug!("window {}: {e}", n + 1);
                    last = GroundingOutcome::empty(completion.text);
                }
            }
        }
        let Some(mut outcome) = outcome else {
            // two malformed answers in a row count as Empty for this window
            continue;
        };
        if outcome.is_cited()
            && opts.strict_citation
            && !citation_supported(outcome.citation.as_deref().unwrap_or(""), batch)
        {
            outcome = GroundingOutcome::empty(outcome.raw_text);
        }
        if outcome.is_cited() {
            return Ok(GroundReport {
                revised_answer: outcome.revised_answer.clone().unwrap_or_default(),
                outcome,
                batches_consumed: n as u32 + 1,
                retries,
                usage,
            });
        }
        last = outcome;
    }
    Ok(GroundReport {
        revised_answer: immediate_answer.to_string(),
        outcome: last,
        batches_consumed: plan.windows.len() as u32,
        retries,
        usage,
    })
}
