//! Grounding-distillation corpus synthesis.
//!
//! For each single-hop question a student model answers the bare question,
//! then a teacher model grounds that answer in a shuffled list holding the
//! gold document and noise documents. Teacher outputs are filtered in order:
//! no evidence, no revision, revision misaligned with the gold answer.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::cover_em;
use crate::grounding::{clean_revision, is_empty_signal, scan_tags};
use crate::llm::{ChatMessage, LlmSource};
use crate::par;
use crate::prompts::PromptSet;
use crate::types::{DecodingParams, Document, InvalidInput, Question};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyEvidence,
    MissingRevision,
    Misaligned,
    LlmError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Keep,
    Drop(DropReason),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

/// One synthesis input: a question with exactly one gold answer, its gold
/// document, and noise documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisInput {
    pub question: Question,
    pub gold_doc: Document,
    pub noise_docs: Vec<Document>,
}

impl SynthesisInput {
    pub fn gold_answer(&self) -> &str {
        self.question.gold_answers.first().map(String::as_str).unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), InvalidInput> {
        self.question.validate()?;
        if self.question.gold_answers.len() != 1 {
            return Err(InvalidInput::EmptyGold);
        }
        self.gold_doc.validate()?;
        self.noise_docs.iter().try_for_each(Document::validate)
    }
}

#[derive(Deserialize)]
struct InputLine {
    id: String,
    question: String,
    answer: String,
    gold_doc: Document,
    #[serde(default)]
    noise_docs: Vec<Document>,
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("input line {line}: {message}")]
    InputLine { line: usize, message: String },
    #[error("no examples")]
    EmptyList,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Reads synthesis inputs: JSONL of
/// `{id, question, answer, gold_doc: {id, title, body}, noise_docs: [..]}`.
pub fn load_inputs(path: impl AsRef<Path>) -> Result<Vec<SynthesisInput>, DistillError> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DistillError::InputLine {
            line: i + 1,
            message,
        };
        let raw: InputLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let input = SynthesisInput {
            question: Question {
                id: raw.id,
                text: raw.question,
                gold_answers: vec![raw.answer],
                metadata: Default::default(),
            },
            gold_doc: raw.gold_doc,
            noise_docs: raw.noise_docs,
        };
        input.validate().map_err(|e| bad(e.to_string()))?;
        out.push(input);
    }
    Ok(out)
}

/// One training pair plus its filter verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub id: String,
    pub instruction: String,
    pub documents: Vec<Document>,
    pub immediate_answer: String,
    pub target: String,
    pub gold_doc_id: String,
    /// 1-based position of the gold document in `documents`.
    pub gold_position: usize,
    #[serde(default)]
    pub verdict: Verdict,
}

/// Applies the filter rules in order and reports the first that fails.
pub fn apply_filters(target: &str, gold_answer: &str) -> Verdict {
    let tags = scan_tags(target);
    match tags.reference {
        None => return Verdict::Drop(DropReason::EmptyEvidence),
        Some(r) if r.trim().is_empty() || is_empty_signal(r) => {
            return Verdict::Drop(DropReason::EmptyEvidence)
        }
        Some(_) => {}
    }
    let revision = match tags.revision.map(clean_revision) {
        Some(r) if !r.is_empty() => r,
        _ => return Verdict::Drop(DropReason::MissingRevision),
    };
    match cover_em(revision, &[gold_answer]) {
        Ok(1) => Verdict::Keep,
        _ => Verdict::Drop(DropReason::Misaligned),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub seed: u64,
    /// Noise documents kept per example (gold + noise = prompt documents).
    pub noise_docs: usize,
    pub decoding: DecodingParams,
    pub concurrency: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_docs: 9,
            decoding: DecodingParams::default(),
            concurrency: 4,
        }
    }
}

/// Gold + noise documents shuffled with a per-example stream of the seeded
/// RNG; returns the list and the 1-based gold position.
pub fn arrange_documents(input: &SynthesisInput, index: usize, config: &SynthesisConfig) -> (Vec<Document>, usize) {
    let mut docs: Vec<Document> = std::iter::once(input.gold_doc.clone())
        .chain(input.noise_docs.iter().take(config.noise_docs).cloned())
        .map(|mut d| {
            d.rank = None;
            d
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    // shuffle positions so the gold document is found by position, not id
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    let gold_position = order.iter().position(|&i| i == 0).expect("gold present") + 1;
    let mut slots: Vec<Option<Document>> = docs.drain(..).map(Some).collect();
    let docs = order
        .into_iter()
        .map(|i| slots[i].take().expect("each index once"))
        .collect();
    (docs, gold_position)
}

/// Student answer, teacher revision, filter verdict for one input.
pub fn synthesize_example(
    input: &SynthesisInput,
    index: usize,
    student: &dyn LlmSource,
    teacher: &dyn LlmSource,
    prompts: &PromptSet,
    config: &SynthesisConfig,
) -> TrainingExample {
    let (documents, gold_position) = arrange_documents(input, index, config);
    let q = &input.question;
    let mut example = TrainingExample {
        id: q.id.clone(),
        instruction: String::new(),
        documents,
        immediate_answer: String::new(),
        target: String::new(),
        gold_doc_id: input.gold_doc.id.clone(),
        gold_position,
        verdict: Verdict::Drop(DropReason::LlmError),
    };
    let student_llm = student.client_for(q);
    match student_llm.complete(&[ChatMessage::user(q.text.clone())], &config.decoding) {
        Ok(c) => example.immediate_answer = c.text.trim().to_string(),
        Err(e) => {
            log::warn!("{}: student failed: {e}", q.id);
            return example;
        }
    }
    let instruction = match prompts.grounding_text(&q.text, &q.text, &example.immediate_answer, &example.documents) {
        Ok(i) => i,
        Err(e) => {
            log::warn!("{}: {e}", q.id);
            return example;
        }
    };
    example.instruction = instruction;
    let teacher_llm = teacher.client_for(q);
    let messages = match prompts.render_teacher(&example.instruction) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("{}: {e}", q.id);
            return example;
        }
    };
    match teacher_llm.complete(&messages, &config.decoding) {
        Ok(c) => {
            example.target = c.text;
            example.verdict = apply_filters(&example.target, input.gold_answer());
        }
        Err(e) => log::warn!("{}: teacher failed: {e}", q.id),
    }
    example
}

/// Synthesizes every input; output order matches input order.
pub fn synthesize_corpus(
    inputs: &[SynthesisInput],
    student: &dyn LlmSource,
    teacher: &dyn LlmSource,
    prompts: &PromptSet,
    config: &SynthesisConfig,
) -> Vec<TrainingExample> {
    par::map_bounded(inputs, config.concurrency, |i, input| {
        synthesize_example(input, i, student, teacher, prompts, config)
    })
}

fn whitespace_len(s: &str) -> usize {
    s.split_whitespace().count()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Corpus statistics over kept examples; lengths are whitespace tokens and
/// gold document length counts the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub avg_instruction_len: f64,
    pub avg_target_len: f64,
    pub avg_gold_docs: f64,
    pub avg_gold_doc_len: f64,
}

pub fn dataset_stats(examples: &[TrainingExample]) -> Result<DatasetStats, DistillError> {
    let kept: Vec<&TrainingExample> = examples.iter().filter(|e| e.verdict.is_keep()).collect();
    if kept.is_empty() {
        return Err(DistillError::EmptyList);
    }
    let n = kept.len() as f64;
    let mean = |f: &dyn Fn(&TrainingExample) -> usize| round2(kept.iter().map(|e| f(e) as f64).sum::<f64>() / n);
    Ok(DatasetStats {
        count: kept.len(),
        avg_instruction_len: mean(&|e| whitespace_len(&e.instruction)),
        avg_target_len: mean(&|e| whitespace_len(&e.target)),
        avg_gold_docs: mean(&|e| e.documents.iter().filter(|d| d.id == e.gold_doc_id).count()),
        avg_gold_doc_len: mean(&|e| {
            e.documents
                .get(e.gold_position.wrapping_sub(1))
                .map(|d| whitespace_len(&d.body))
                .unwrap_or(0)
        }),
    })
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    id: &'a str,
    instruction: &'a str,
    documents: &'a [Document],
    immediate_answer: &'a str,
    target: &'a str,
    gold_doc_id: &'a str,
    gold_position: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<Verdict>,
}

/// Writes the corpus as JSON Lines. Only kept examples unless
/// `include_dropped`, in which case every line carries its verdict.
/// Returns the number of lines written.
pub fn emit_corpus(
    examples: &[TrainingExample],
    path: impl AsRef<Path>,
    include_dropped: bool,
) -> Result<usize, DistillError> {
    let mut w = BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut n = 0;
    for e in examples {
        if !include_dropped && !e.verdict.is_keep() {
            continue;
        }
        let line = CorpusLine {
            id: &e.id,
            instruction: &e.instruction,
            documents: &e.documents,
            immediate_answer: &e.immediate_answer,
            target: &e.target,
            gold_doc_id: &e.gold_doc_id,
            gold_position: e.gold_position,
            verdict: include_dropped.then_some(e.verdict),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Reads an emitted corpus back. Lines without a verdict are Keep.
pub fn load_corpus_file(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>, DistillError> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DistillError::InputLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
