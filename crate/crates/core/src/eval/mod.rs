//! Evaluation: cover-EM accuracy, token F1, LLM-judged accuracy, dataset
//! loaders and aggregation.

mod datasets;
mod metrics;

pub use datasets::{load_dataset, parse_dataset, DatasetError, DatasetFormat, Location};
pub use metrics::{aggregate, cover_em, normalize, token_f1, EvalRecord, MetricError, Summary, Verdict};

use thiserror::Error;

use crate::llm::{LlmClient, LlmError};
use crate::par;
use crate::prompts::{PromptError, PromptSet};
use crate::types::DecodingParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparseable verdict {0:?}")]
    UnparseableVerdict(String),
}

/// Reads Yes/No from the first non-whitespace token.
pub fn parse_verdict(text: &str) -> Result<Verdict, JudgeError> {
    let first = text
        .split_whitespace()
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    if first.starts_with("yes") {
        Ok(Verdict::Yes)
    } else if first.starts_with("no") {
        Ok(Verdict::No)
    } else {
        Err(JudgeError::UnparseableVerdict(text.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgement {
    pub verdict: Verdict,
    /// Both attempts were unreadable and the verdict defaulted to No.
    pub flagged: bool,
    pub calls: u32,
}

/// Asks the judge whether `prediction` implies `gold`. Always decodes at
/// temperature 0. An unreadable reply is re-asked once, then counted as a
/// flagged No.
pub fn judge(
    llm: &dyn LlmClient,
    prompts: &PromptSet,
    question: &str,
    prediction: &str,
    gold: &str,
    max_output_tokens: u32,
) -> Result<Judgement, JudgeError> {
    let messages = prompts.render_judge(question, prediction, gold)?;
    let params = DecodingParams {
        temperature: 0.0,
        max_output_tokens,
    };
    for attempt in 0..2 {
        let c = llm.complete(&messages, &params)?;
        match parse_verdict(&c.text) {
            Ok(verdict) => {
                return Ok(Judgement {
                    verdict,
                    flagged: false,
                    calls: attempt + 1,
                })
            }
            Err(e) => log::warn!("judge attempt {}: {e}", attempt + 1),
        }
    }
    Ok(Judgement {
        verdict: Verdict::No,
        flagged: true,
        calls: 2,
    })
}

/// A prediction paired with its question.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub question_id: String,
    pub question: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
}

/// Scores every prediction with cover-EM and F1, keeping input order.
pub fn score_all(preds: &[Prediction]) -> Result<Vec<EvalRecord>, MetricError> {
    par::map_ordered(preds, |p| {
        EvalRecord::score(p.question_id.clone(), p.prediction.clone(), p.gold_answers.clone())
    })
    .into_iter()
    .collect()
}

pub fn score_all_sequential(preds: &[Prediction]) -> Result<Vec<EvalRecord>, MetricError> {
    preds
        .iter()
        .map(|p| EvalRecord::score(p.question_id.clone(), p.prediction.clone(), p.gold_answers.clone()))
        .collect()
}

/// Adds judge verdicts to `records` (aligned with `preds`), running up to
/// `workers` judge calls at once. Empty predictions are judged No without a
/// call. The judge sees the first gold answer.
pub fn judge_all(
    llm: &dyn LlmClient,
    prompts: &PromptSet,
    preds: &[Prediction],
    records: &mut [EvalRecord],
    workers: usize,
    max_output_tokens: u32,
) -> Result<(), JudgeError> {
    let verdicts = par::map_bounded(preds, workers, |_, p| {
        if p.prediction.trim().is_empty() {
            return Ok(Judgement {
                verdict: Verdict::No,
                flagged: false,
                calls: 0,
            });
        }
        let gold = p.gold_answers.first().map(String::as_str).unwrap_or("");
        judge(llm, prompts, &p.question, &p.prediction, gold, max_output_tokens)
    });
    for (rec, v) in records.iter_mut().zip(verdicts) {
        let j = v?;
        rec.acc_judge = Some(j.verdict);
        rec.judge_flagged = j.flagged;
    }
    Ok(())
}
