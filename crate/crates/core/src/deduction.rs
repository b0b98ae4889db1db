//! Answer deduction: ask the model for the next single-hop question together
//! with a direct answer, or for the final answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmClient, LlmError};
use crate::prompts::{PromptError, PromptSet};
use crate::types::{DecodingParams, HopRecord, Question, TokenUsage};

pub const FINISH_MARKER: &str = "###Finish[";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeductionResult {
    Step {
        sub_question: String,
        immediate_answer: String,
        raw_text: String,
    },
    Finish {
        final_answer: String,
        raw_text: String,
    },
}

impl DeductionResult {
    pub fn raw_text(&self) -> &str {
        match self {
            DeductionResult::Step { raw_text, .. } | DeductionResult::Finish { raw_text, .. } => {
                raw_text
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("deduction output matches neither a step nor a finish marker")]
    ParseFailure,
    #[error("finish marker has no closing `]`")]
    UnclosedFinish,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeductionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{kind} in output {raw:?}")]
    Parse { kind: ParseError, raw: String },
}

/// Parses one deduction completion.
///
/// A finish marker anywhere wins over step lines. Otherwise the first
/// `Question <n>:` line and the first `Answer <n>:` line are taken, matching
/// case-insensitively with any index and spacing.
pub fn parse_deduction(text: &str) -> Result<DeductionResult, ParseError> {
    if let Some(answer) = finish_span(text)? {
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(ParseError::ParseFailure);
        }
        return Ok(DeductionResult::Finish {
            final_answer: answer.to_string(),
            raw_text: text.to_string(),
        });
    }
    let sub_question = first_labeled(text, "question");
    let answer = first_labeled(text, "answer");
    match (sub_question, answer) {
        (Some(q), Some(a)) if !q.is_empty() && !a.is_empty() => Ok(DeductionResult::Step {
            sub_question: q.to_string(),
            immediate_answer: a.to_string(),
            raw_text: text.to_string(),
        }),
        _ => Err(ParseError::ParseFailure),
    }
}

fn finish_span(text: &str) -> Result<Option<&str>, ParseError> {
    let lower = text.to_ascii_lowercase();
    let Some(start) = lower.find(&FINISH_MARKER.to_ascii_lowercase()) else {
        return Ok(None);
    };
    let body_start = start + FINISH_MARKER.len();
    let body = &text[body_start..];
    let mut depth = 0usize;
    for (i, c) in body.char_indices() {
        match c {
            '[' => depth += 1,
            ']' if depth == 0 => return Ok(Some(&body[..i])),
            ']' => depth -= 1,
            _ => {}
        }
    }
    // unbalanced inner brackets: fall back to the last `]`
    match body.rfind(']') {
        Some(i) => Ok(Some(&body[..i])),
        None => Err(ParseError::UnclosedFinish),
    }
}

/// Value of the first line shaped like `<label> <digits>? : value`.
fn first_labeled<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let t = line.trim_start();
        let head = t.get(..label.len())?;
        if !head.eq_ignore_ascii_case(label) {
            return None;
        }
        let rest = t[label.len()..].trim_start();
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start();
        rest.strip_prefix(':').map(str::trim)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deduced {
    pub result: DeductionResult,
    pub usage: TokenUsage,
}

/// One deduction call: render, complete, parse.
pub fn deduce(
    llm: &dyn LlmClient,
    prompts: &PromptSet,
    question: &Question,
    hops: &[HopRecord],
    params: &DecodingParams,
) -> Result<Deduced, (DeductionError, TokenUsage)> {
    let messages = prompts
        .render_deduction(question, hops)
        .map_err(|e| (e.into(), TokenUsage::default()))?;
    let completion = llm
        .complete(&messages, params)
        .map_err(|e| (e.into(), TokenUsage::default()))?;
    let usage = TokenUsage {
        prompt_tokens: completion.prompt_tokens,
        completion_tokens: completion.completion_tokens,
    };
    match parse_deduction(&completion.text) {
        Ok(result) => Ok(Deduced { result, usage }),
        Err(kind) => Err((
            DeductionError::Parse {
                kind,
                raw: completion.text,
            },
            usage,
        )),
    }
}
