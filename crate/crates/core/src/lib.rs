//! Generate-then-ground multi-hop question answering.
//!
//! A deduction model proposes the next sub-question with an immediate
//! answer; retrieved documents are shown to the model a batch at a time
//! until it cites evidence and revises the answer, or every batch comes
//! back empty and the immediate answer stands.
//!
//! ```no_run
//! use hopground::{answer_question, CorpusIndex, Document, PipelineConfig, PromptSet, Question, ScriptedLlm};
//!
//! let index = CorpusIndex::build(vec![Document::new("d1", "Paris", "Paris is the capital of France.")?])?;
//! let llm = ScriptedLlm::from_file("script.json")?;
//! let q = Question::new("q1", "What is the capital of France?")?;
//! let t = answer_question(&q, &PipelineConfig::default(), &llm, &index, &PromptSet::default())?;
//! println!("{}", t.final_answer);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod deduction;
pub mod distill;
pub mod eval;
pub mod grounding;
pub mod llm;
pub mod par;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod types;

pub use deduction::{parse_deduction, DeductionResult};
pub use grounding::{ground, parse_grounding, plan_batches, BatchPlan};
pub use llm::{
    ChatMessage, Completion, LlmClient, LlmError, LlmSource, OpenAiClient, OpenAiConfig, ScriptBook, ScriptFile,
    ScriptStep, ScriptedLlm,
};
pub use pipeline::{answer_dataset, answer_question, PipelineConfig, PipelineError, RetrieverKind};
pub use prompts::{PromptOptions, PromptSet};
pub use retrieval::{CorpusIndex, ExternalRetriever, Retriever};
pub use types::{
    DecodingParams, Document, GroundingKind, GroundingOutcome, HopRecord, Question, Termination, TokenUsage,
    Trajectory,
};
