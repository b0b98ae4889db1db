//! Prompt templates with `{placeholder}` slots.
//!
//! Four templates drive the loop: deduction (with few-shot examples),
//! grounding (zero-shot), the correctness judge, and the distillation
//! teacher wrapper. Defaults are compiled in from `templates/`; any of them
//! can be overridden by a file of the same name in a template directory.
//! The default deduction examples are hand-written reconstructions of the
//! expected output shape, not a published exemplar set.
//!
//! Syntax: `{name}` is a placeholder, `{{` and `}}` are literal braces.
//! Bound values are inserted verbatim and never re-scanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ChatMessage;
use crate::types::{Document, HopRecord, Question};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("placeholder `{0}` is not bound or is empty")]
    MissingPlaceholder(String),
    #[error("expected a {expected} template, got {got}")]
    WrongTemplate {
        expected: TemplateKind,
        got: TemplateKind,
    },
    #[error("grounding batch is empty")]
    EmptyBatch,
    #[error("template {name}: {message}")]
    Syntax { name: String, message: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Deduction,
    Grounding,
    Judge,
    SynthesisTeacher,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Deduction,
        TemplateKind::Grounding,
        TemplateKind::Judge,
        TemplateKind::SynthesisTeacher,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Deduction => "deduction.txt",
            TemplateKind::Grounding => "grounding.txt",
            TemplateKind::Judge => "judge.txt",
            TemplateKind::SynthesisTeacher => "synthesis_teacher.txt",
        }
    }

    /// Placeholders a template of this kind must contain.
    fn essential(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Deduction => &["question", "context"],
            TemplateKind::Grounding => &["sub_question", "immediate_answer", "documents"],
            TemplateKind::Judge => &["question", "prediction", "answer"],
            TemplateKind::SynthesisTeacher => &["instruction"],
        }
    }

    fn default_text(self) -> &'static str {
        match self {
            TemplateKind::Deduction => include_str!("../templates/deduction.txt"),
            TemplateKind::Grounding => include_str!("../templates/grounding.txt"),
            TemplateKind::Judge => include_str!("../templates/judge.txt"),
            TemplateKind::SynthesisTeacher => include_str!("../templates/synthesis_teacher.txt"),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateKind::Deduction => "deduction",
            TemplateKind::Grounding => "grounding",
            TemplateKind::Judge => "judge",
            TemplateKind::SynthesisTeacher => "synthesis_teacher",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// A parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    segments: Vec<Segment>,
    placeholders: BTreeSet<String>,
}

fn strip_final_newline(text: &str) -> &str {
    text.strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(text)
}

impl PromptTemplate {
    pub fn parse(kind: TemplateKind, text: &str) -> Result<Self, PromptError> {
        let syntax = |message: String| PromptError::Syntax {
            name: kind.to_string(),
            message,
        };
        let text = strip_final_newline(text);
        let mut segments = Vec::new();
        let mut placeholders = BTreeSet::new();
        let mut lit = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    let mut closed = false;
                    for (_, n) in chars.by_ref() {
                        if n == '}' {
                            closed = true;
                            break;
                        }
                        name.push(n);
                    }
                    if !closed {
                        return Err(syntax(format!("unclosed `{{` at byte {pos}")));
                    }
                    let valid = name
                        .chars()
                        .next()
                        .is_some_and(|f| f.is_ascii_alphabetic() || f == '_')
                        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                    if !valid {
                        return Err(syntax(format!("invalid placeholder name `{name}`")));
                    }
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    placeholders.insert(name.clone());
                    segments.push(Segment::Slot(name));
                }
                '}' => return Err(syntax(format!("stray `}}` at byte {pos}"))),
                _ => lit.push(c),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        for need in kind.essential() {
            if !placeholders.contains(*need) {
                return Err(syntax(format!("missing required placeholder `{need}`")));
            }
        }
        Ok(Self {
            kind,
            segments,
            placeholders,
        })
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        Self::parse(kind, kind.default_text()).expect("built-in template parses")
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitutes every placeholder. Fails if any is unbound.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => match bindings.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::MissingPlaceholder(name.clone())),
                },
            }
        }
        Ok(out)
    }

    fn expect(&self, kind: TemplateKind) -> Result<(), PromptError> {
        if self.kind != kind {
            return Err(PromptError::WrongTemplate {
                expected: kind,
                got: self.kind,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Few-shot examples included in the deduction prompt.
    pub deduction_examples: usize,
    /// Per-document body budget in characters inside grounding prompts.
    pub doc_char_budget: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            deduction_examples: 2,
            doc_char_budget: 1500,
        }
    }
}

pub const EXAMPLES_FILE: &str = "deduction_examples.txt";
const EXAMPLE_SEPARATOR: &str = "---";

/// The full set of templates plus rendering options.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub deduction: PromptTemplate,
    pub grounding: PromptTemplate,
    pub judge: PromptTemplate,
    pub synthesis_teacher: PromptTemplate,
    pub examples: Vec<String>,
    pub options: PromptOptions,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            deduction: PromptTemplate::default_for(TemplateKind::Deduction),
            grounding: PromptTemplate::default_for(TemplateKind::Grounding),
            judge: PromptTemplate::default_for(TemplateKind::Judge),
            synthesis_teacher: PromptTemplate::default_for(TemplateKind::SynthesisTeacher),
            examples: split_examples(include_str!("../templates/deduction_examples.txt")),
            options: PromptOptions::default(),
        }
    }
}

fn split_examples(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim() == EXAMPLE_SEPARATOR {
            out.push(cur.join("\n"));
            cur.clear();
        } else {
            cur.push(line);
        }
    }
    out.push(cur.join("\n"));
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl PromptSet {
    /// Loads overrides from `dir`; files that are absent keep the defaults.
    pub fn from_dir(dir: impl AsRef<Path>, options: PromptOptions) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = PromptSet {
            options,
            ..PromptSet::default()
        };
        let read = |name: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path)
                .map(Some)
                .map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
        };
        for kind in TemplateKind::ALL {
            if let Some(text) = read(kind.file_name())? {
                let t = PromptTemplate::parse(kind, &text)?;
                match kind {
                    TemplateKind::Deduction => set.deduction = t,
                    TemplateKind::Grounding => set.grounding = t,
                    TemplateKind::Judge => set.judge = t,
                    TemplateKind::SynthesisTeacher => set.synthesis_teacher = t,
                }
            }
        }
        if let Some(text) = read(EXAMPLES_FILE)? {
            set.examples = split_examples(&text);
        }
        Ok(set)
    }

    pub fn with_options(mut self, options: PromptOptions) -> Self {
        self.options = options;
        self
    }

    /// Deduction prompt for the next hop given the hops completed so far.
    pub fn render_deduction(
        &self,
        question: &Question,
        hops: &[HopRecord],
    ) -> Result<Vec<ChatMessage>, PromptError> {
        self.deduction.expect(TemplateKind::Deduction)?;
        let examples = self
            .examples
            .iter()
            .take(self.options.deduction_examples)
            .cloned()
            .collect::<Vec<_>>()
            .join("\n\n");
        let context = hops
            .iter()
            .enumerate()
            .map(|(i, h)| format_step(i + 1, &h.sub_question, &h.revised_answer) + "\n")
            .collect::<String>();
        let mut b = BTreeMap::new();
        b.insert("examples", examples);
        b.insert("question", one_line(&question.text));
        b.insert("context", context);
        b.insert("next_index", (hops.len() + 1).to_string());
        Ok(vec![ChatMessage::user(self.deduction.render(&b)?)])
    }

    pub fn render_grounding(
        &self,
        question: &Question,
        sub_question: &str,
        immediate_answer: &str,
        batch: &[Document],
    ) -> Result<Vec<ChatMessage>, PromptError> {
        Ok(vec![ChatMessage::user(self.grounding_text(
            &question.text,
            sub_question,
            immediate_answer,
            batch,
        )?)])
    }

    /// Rendered grounding instruction as plain text.
    pub fn grounding_text(
        &self,
        question: &str,
        sub_question: &str,
        immediate_answer: &str,
        batch: &[Document],
    ) -> Result<String, PromptError> {
        self.grounding.expect(TemplateKind::Grounding)?;
        if batch.is_empty() {
            return Err(PromptError::EmptyBatch);
        }
        let documents = batch
            .iter()
            .enumerate()
            .map(|(i, d)| self.render_document(i + 1, d))
            .collect::<Vec<_>>()
            .join("\n");
        let mut b = BTreeMap::new();
        b.insert("question", sanitize(question));
        b.insert("sub_question", sanitize(sub_question));
        b.insert("immediate_answer", sanitize(immediate_answer));
        b.insert("documents", documents);
        self.grounding.render(&b)
    }

    fn render_document(&self, marker: usize, doc: &Document) -> String {
        let body = truncate_chars(&sanitize(&doc.body), self.options.doc_char_budget);
        let title = sanitize(&doc.title);
        if title.is_empty() {
            format!("[{marker}] {body}")
        } else {
            format!("[{marker}] {title}: {body}")
        }
    }

    pub fn render_judge(
        &self,
        question: &str,
        prediction: &str,
        gold_answer: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        self.judge.expect(TemplateKind::Judge)?;
        let mut b = BTreeMap::new();
        for (name, value) in [
            ("question", question),
            ("prediction", prediction),
            ("answer", gold_answer),
        ] {
            if value.trim().is_empty() {
                return Err(PromptError::MissingPlaceholder(name.to_string()));
            }
            b.insert(name, value.to_string());
        }
        Ok(vec![ChatMessage::user(self.judge.render(&b)?)])
    }

    pub fn render_teacher(&self, instruction: &str) -> Result<Vec<ChatMessage>, PromptError> {
        self.synthesis_teacher.expect(TemplateKind::SynthesisTeacher)?;
        let mut b = BTreeMap::new();
        b.insert("instruction", instruction.to_string());
        Ok(vec![ChatMessage::user(self.synthesis_teacher.render(&b)?)])
    }
}

/// One step in the deduction format. [`crate::deduction::parse_deduction`]
/// reads this back.
pub fn format_step(index: usize, sub_question: &str, answer: &str) -> String {
    format!(
        "Question {index}: {}\nAnswer {index}: {}",
        one_line(sub_question),
        one_line(answer)
    )
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const TAGS: [&str; 4] = ["<ref>", "</ref>", "<revise>", "</revise>"];

/// Collapses whitespace to single spaces and defuses grounding tags, so
/// inserted text can neither fake a document marker line nor a tag.
pub fn sanitize(s: &str) -> String {
    let flat = one_line(s);
    let lower = flat.to_ascii_lowercase();
    let mut out = String::with_capacity(flat.len());
    let mut i = 0;
    'outer: while i < flat.len() {
        for tag in TAGS {
            if lower[i..].starts_with(tag) {
                out.push_str("&lt;");
                out.push_str(&flat[i + 1..i + tag.len() - 1]);
                out.push_str("&gt;");
                i += tag.len();
                continue 'outer;
            }
        }
        let c = flat[i..].chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

fn truncate_chars(s: &str, budget: usize) -> String {
    match s.char_indices().nth(budget) {
        Some((cut, _)) => format!("{}...", &s[..cut]),
        None => s.to_string(),
    }
}
