//! Domain types shared by every stage of the loop.
//!
//! All types serialize to canonical snake_case JSON; maps use `BTreeMap`
//! so serialized output is byte-stable across runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvalidInput {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("document `{0}` has rank 0; ranks are 1-based")]
    ZeroRank(String),
    #[error("gold answer is empty")]
    EmptyGold,
    #[error("{field} must be at least {min}")]
    OutOfRange { field: &'static str, min: u64 },
    #[error("temperature must be a finite value >= 0")]
    BadTemperature,
}

/// An input multi-hop question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, InvalidInput> {
        let q = Self {
            id: id.into(),
            text: text.into(),
            gold_answers: Vec::new(),
            metadata: BTreeMap::new(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_gold(mut self, gold: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.gold_answers = gold.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), InvalidInput> {
        if self.text.trim().is_empty() {
            return Err(InvalidInput::EmptyQuestion);
        }
        if self.gold_answers.iter().any(|g| g.trim().is_empty()) {
            return Err(InvalidInput::EmptyGold);
        }
        Ok(())
    }
}

/// A retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, InvalidInput> {
        let d = Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            rank: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), InvalidInput> {
        if self.body.trim().is_empty() {
            return Err(InvalidInput::EmptyBody(self.id.clone()));
        }
        if self.rank == Some(0) {
            return Err(InvalidInput::ZeroRank(self.id.clone()));
        }
        Ok(())
    }

    pub fn with_rank(mut self, rank: u32) -> Self {
        self.rank = Some(rank);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingKind {
    Cited,
    Empty,
}

/// Parsed result of one grounding call: a citation plus revised answer, or
/// the Empty signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub kind: GroundingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_answer: Option<String>,
    pub raw_text: String,
}

impl GroundingOutcome {
    pub fn cited(
        citation: impl Into<String>,
        revised_answer: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Self {
        Self {
            kind: GroundingKind::Cited,
            citation: Some(citation.into()),
            revised_answer: Some(revised_answer.into()),
            raw_text: raw_text.into(),
        }
    }

    pub fn empty(raw_text: impl Into<String>) -> Self {
        Self {
            kind: GroundingKind::Empty,
            citation: None,
            revised_answer: None,
            raw_text: raw_text.into(),
        }
    }

    pub fn is_cited(&self) -> bool {
        self.kind == GroundingKind::Cited
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

/// One iteration of the loop: sub-question, immediate answer, evidence and
/// the revised answer that enters the next iteration's context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopRecord {
    pub index: u32,
    pub sub_question: String,
    pub immediate_answer: String,
    pub retrieved: Vec<Document>,
    pub grounding: GroundingOutcome,
    pub revised_answer: String,
    pub batches_consumed: u32,
    /// Extra grounding calls spent re-asking after malformed output.
    #[serde(default)]
    pub grounding_retries: u32,
    /// Extra deduction calls spent re-asking after unparseable output.
    #[serde(default)]
    pub deduction_retries: u32,
    /// Verbatim deduction output that produced this hop.
    pub deduction_raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinishSignal,
    MaxHopsReached,
    /// Unparseable deduction output, or an LLM/retrieval failure; see
    /// `Trajectory::error` for the latter.
    ParseFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryUsage {
    /// One entry per deduction round (a hop, or the final finishing round).
    pub per_hop: Vec<TokenUsage>,
    pub total: TokenUsage,
}

/// Full reasoning trace for one input question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: Question,
    pub hops: Vec<HopRecord>,
    pub final_answer: String,
    pub termination: Termination,
    pub token_usage: TrajectoryUsage,
    pub llm_calls: u32,
    /// Calls made in the final round when it produced no hop (a finish or a
    /// failure); 0 when the hop cap ended the loop.
    #[serde(default)]
    pub terminal_calls: u32,
    /// Raw output of the deduction round that ended the trajectory, when it
    /// did not become a hop (finish marker or parse failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    /// Hops whose grounding produced a citation.
    pub fn grounded_hops(&self) -> usize {
        self.hops.iter().filter(|h| h.grounding.is_cited()).count()
    }

    /// Hops that fell back to the immediate answer.
    pub fn fallback_hops(&self) -> usize {
        self.hops.len() - self.grounded_hops()
    }

    pub fn is_failure(&self) -> bool {
        self.termination == Termination::ParseFailure
    }
}

/// Decoding parameters sent with every generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_output_tokens() -> u32 {
    1024
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), InvalidInput> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(InvalidInput::BadTemperature);
        }
        if self.max_output_tokens == 0 {
            return Err(InvalidInput::OutOfRange {
                field: "max_output_tokens",
                min: 1,
            });
        }
        Ok(())
    }
}
