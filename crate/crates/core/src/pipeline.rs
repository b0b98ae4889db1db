//! The generate-then-ground loop.
//!
//! Each hop deduces a sub-question with an immediate answer, retrieves
//! documents for the sub-question, grounds the answer batch by batch, and
//! appends (sub-question, revised answer) to the context of the next hop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deduction::{deduce, DeductionError, DeductionResult};
use crate::grounding::{ground, GroundOptions};
use crate::llm::{LlmClient, LlmSource};
use crate::par;
use crate::prompts::PromptSet;
use crate::retrieval::{RetrievalError, Retriever};
use crate::types::{
    DecodingParams, HopRecord, InvalidInput, Question, Termination, TokenUsage, Trajectory,
    TrajectoryUsage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_hops: u32,
    pub top_k: usize,
    pub batch_size: usize,
    pub retriever: RetrieverKind,
    pub decoding: DecodingParams,
    pub strict_citation: bool,
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_hops: 5,
            top_k: 10,
            batch_size: 3,
            retriever: RetrieverKind::Bm25,
            decoding: DecodingParams::default(),
            strict_citation: false,
            concurrency: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), InvalidInput> {
        let at_least_one = |field: &'static str, v: u64| {
            if v < 1 {
                Err(InvalidInput::OutOfRange { field, min: 1 })
            } else {
                Ok(())
            }
        };
        at_least_one("max_hops", self.max_hops as u64)?;
        at_least_one("top_k", self.top_k as u64)?;
        at_least_one("batch_size", self.batch_size as u64)?;
        at_least_one("concurrency", self.concurrency as u64)?;
        self.decoding.validate()
    }

    fn ground_options(&self) -> GroundOptions {
        GroundOptions {
            batch_size: self.batch_size,
            strict_citation: self.strict_citation,
            params: self.decoding,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] InvalidInput),
}

struct Run {
    hops: Vec<HopRecord>,
    per_round: Vec<TokenUsage>,
    calls: u32,
    /// `calls` when the current round began.
    round_start: u32,
}

impl Run {
    fn finish(
        self,
        question: &Question,
        final_answer: String,
        termination: Termination,
        terminal_raw: Option<String>,
        error: Option<String>,
    ) -> Trajectory {
        let mut total = TokenUsage::default();
        for u in &self.per_round {
            total += *u;
        }
        Trajectory {
            question: question.clone(),
            hops: self.hops,
            final_answer,
            termination,
            token_usage: TrajectoryUsage {
                per_hop: self.per_round,
                total,
            },
            llm_calls: self.calls,
            terminal_calls: self.calls - self.round_start,
            terminal_raw,
            error,
        }
    }

    fn last_revised(&self) -> String {
        self.hops
            .last()
            .map(|h| h.revised_answer.clone())
            .unwrap_or_default()
    }

    fn fail(self, question: &Question, raw: Option<String>, error: Option<String>) -> Trajectory {
        let answer = self.last_revised();
        self.finish(question, answer, Termination::ParseFailure, raw, error)
    }
}

/// Runs the loop for one question. Failures end the trajectory early with
/// `Termination::ParseFailure`, keeping completed hops.
pub fn answer_question(
    question: &Question,
    config: &PipelineConfig,
    llm: &dyn LlmClient,
    retriever: &dyn Retriever,
    prompts: &PromptSet,
) -> Result<Trajectory, PipelineError> {
    config.validate()?;
    let mut run = Run {
        hops: Vec::new(),
        per_round: Vec::new(),
        calls: 0,
        round_start: 0,
    };
    while run.hops.len() < config.max_hops as usize {
        run.round_start = run.calls;
        let mut round = TokenUsage::default();

        // deduction, re-asked once on unparseable output
        let mut deduction_retries = 0;
        let deduced = loop {
            run.calls += 1;
            match deduce(llm, prompts, question, &run.hops, &config.decoding) {
                Ok(d) => {
                    round += d.usage;
                    break d.result;
                }
                Err((DeductionError::Parse { kind, raw }, usage)) => {
                    round += usage;
                    if deduction_retries == 0 {
                        deduction_retries += 1;
                        continue;
                    }
                    run.per_round.push(round);
                    return Ok(run.fail(question, Some(raw), Some(kind.to_string())));
                }
                Err((e, usage)) => {
                    if matches!(e, DeductionError::Prompt(_)) {
                        run.calls -= 1;
                    }
                    round += usage;
                    run.per_round.push(round);
                    return Ok(run.fail(question, None, Some(e.to_string())));
                }
            }
        };

        let (sub_question, immediate_answer, deduction_raw) = match deduced {
            DeductionResult::Finish {
                final_answer,
                raw_text,
            } => {
                run.per_round.push(round);
                return Ok(run.finish(
                    question,
                    final_answer,
                    Termination::FinishSignal,
                    Some(raw_text),
                    None,
                ));
            }
            DeductionResult::Step {
                sub_question,
                immediate_answer,
                raw_text,
            } => (sub_question, immediate_answer, raw_text),
        };

        let retrieved = match retriever.retrieve(&sub_question, config.top_k) {
            Ok(docs) => docs,
            Err(RetrievalError::EmptyQuery) => Vec::new(),
            Err(e) => {
                run.per_round.push(round);
                return Ok(run.fail(question, None, Some(format!("retrieval: {e}"))));
            }
        };

        let report = match ground(
            llm,
            prompts,
            question,
            &sub_question,
            &immediate_answer,
            &retrieved,
            &config.ground_options(),
        ) {
            Ok(r) => r,
            Err(f) => {
                run.calls += f.calls;
                round += f.usage;
                run.per_round.push(round);
                return Ok(run.fail(question, None, Some(format!("grounding: {}", f.error))));
            }
        };
        run.calls += report.llm_calls();
        round += report.usage;
        run.per_round.push(round);
        run.hops.push(HopRecord {
            index: run.hops.len() as u32 + 1,
            sub_question,
            immediate_answer,
            retrieved,
            grounding: report.outcome,
            revised_answer: report.revised_answer,
            batches_consumed: report.batches_consumed,
            grounding_retries: report.retries,
            deduction_retries,
            deduction_raw,
        });
    }
    run.round_start = run.calls;
    let answer = run.last_revised();
    Ok(run.finish(question, answer, Termination::MaxHopsReached, None, None))
}

/// Answers every question; output order matches input order. Up to
/// `config.concurrency` questions run at once, each strictly sequential.
pub fn answer_dataset<F>(
    questions: &[Question],
    config: &PipelineConfig,
    llms: &dyn LlmSource,
    retriever: &dyn Retriever,
    prompts: &PromptSet,
    on_done: F,
) -> Result<Vec<Trajectory>, PipelineError>
where
    F: Fn(usize, &Trajectory) + Sync + Send,
{
    config.validate()?;
    let out = par::map_bounded(questions, config.concurrency, |i, q| {
        let llm = llms.client_for(q);
        let t = answer_question(q, config, llm.as_ref(), retriever, prompts)
            .expect("config validated above");
        on_done(i, &t);
        t
    });
    Ok(out)
}
