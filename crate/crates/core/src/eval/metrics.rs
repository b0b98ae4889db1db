//! Answer metrics: cover-EM and token F1 over SQuAD-style normalized tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no gold answers")]
    MissingGold,
    #[error("no records to aggregate")]
    EmptyRecords,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}'
                | '\u{2026}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}' | '\u{00B7}'
        )
}

/// Lowercase, strip punctuation, drop the articles a/an/the, split on
/// whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text.to_lowercase().chars().filter(|&c| !is_punct(c)).collect();
    cleaned
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() {
        return haystack.is_empty();
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// 1 when some gold answer's normalized tokens appear contiguously in the
/// normalized prediction.
pub fn cover_em(prediction: &str, gold_answers: &[impl AsRef<str>]) -> Result<u8, MetricError> {
    if gold_answers.is_empty() {
        return Err(MetricError::MissingGold);
    }
    let pred = normalize(prediction);
    Ok(gold_answers
        .iter()
        .any(|g| contains_run(&pred, &normalize(g.as_ref()))) as u8)
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return (pred.is_empty() && gold.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut shared = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    // harmonic mean of precision and recall, reduced to a single division
    (2 * shared) as f64 / (pred.len() + gold.len()) as f64
}

/// Token-level F1, maximized over gold answers.
pub fn token_f1(prediction: &str, gold_answers: &[impl AsRef<str>]) -> Result<f64, MetricError> {
    if gold_answers.is_empty() {
        return Err(MetricError::MissingGold);
    }
    let pred = normalize(prediction);
    Ok(gold_answers
        .iter()
        .map(|g| f1_tokens(&pred, &normalize(g.as_ref())))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub acc: u8,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_judge: Option<Verdict>,
    /// The judge never produced a readable verdict; recorded as No.
    #[serde(default)]
    pub judge_flagged: bool,
}

impl EvalRecord {
    pub fn score(
        question_id: impl Into<String>,
        prediction: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> Result<Self, MetricError> {
        let prediction = prediction.into();
        let acc = cover_em(&prediction, &gold_answers)?;
        let f1 = token_f1(&prediction, &gold_answers)?;
        Ok(Self {
            question_id: question_id.into(),
            prediction,
            gold_answers,
            acc,
            f1,
            acc_judge: None,
            judge_flagged: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub acc: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_judge: Option<f64>,
    pub judged: usize,
    pub judge_flagged: usize,
}

fn percent(sum: f64, n: usize) -> f64 {
    (sum / n as f64 * 100.0 * 100.0).round() / 100.0
}

/// Means scaled to percentages, rounded to two decimals. The judge mean
/// covers judged records only.
pub fn aggregate(records: &[EvalRecord]) -> Result<Summary, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords);
    }
    let n = records.len();
    let acc: f64 = records.iter().map(|r| r.acc as f64).sum();
    let f1: f64 = records.iter().map(|r| r.f1).sum();
    let judged: Vec<Verdict> = records.iter().filter_map(|r| r.acc_judge).collect();
    let yes = judged.iter().filter(|v| **v == Verdict::Yes).count();
    Ok(Summary {
        count: n,
        acc: percent(acc, n),
        f1: percent(f1, n),
        acc_judge: (!judged.is_empty()).then(|| percent(yes as f64, judged.len())),
        judged: judged.len(),
        judge_flagged: records.iter().filter(|r| r.judge_flagged).count(),
    })
}
