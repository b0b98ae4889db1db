//! Benchmark loaders.
//!
//! | format     | file shape                                  | id      | answers                        |
//! |------------|---------------------------------------------|---------|--------------------------------|
//! | generic    | JSONL `{id, question, answers: [..]}`        | `id`    | `answers`                      |
//! | hotpotqa   | JSON array or JSONL `{_id, question, answer}` | `_id`   | `[answer]`                     |
//! | 2wiki      | same as hotpotqa                            | `_id`   | `[answer]`                     |
//! | musique    | JSONL `{id, question, answer, answer_aliases}` | `id`  | `[answer, ..aliases]`          |
//! | strategyqa | JSON array `{qid, question, answer: bool}` or a BIG-bench task `{examples: [{input, target_scores}]}` | `qid` / `sqa-<n>` | `["yes"]` / `["no"]` |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::types::Question;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Hotpotqa,
    Musique,
    #[serde(rename = "2wiki")]
    TwoWiki,
    Strategyqa,
    Generic,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpotqa" => Ok(Self::Hotpotqa),
            "musique" => Ok(Self::Musique),
            "2wiki" | "2wikimultihopqa" => Ok(Self::TwoWiki),
            "strategyqa" => Ok(Self::Strategyqa),
            "generic" => Ok(Self::Generic),
            other => Err(format!(
                "unknown dataset format `{other}` (expected hotpotqa, musique, 2wiki, strategyqa, generic)"
            )),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hotpotqa => "hotpotqa",
            Self::Musique => "musique",
            Self::TwoWiki => "2wiki",
            Self::Strategyqa => "strategyqa",
            Self::Generic => "generic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Record(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Record(n) => write!(f, "record {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed dataset at {location}: {message}")]
    Malformed { location: Location, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn malformed(location: Location, message: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        location,
        message: message.into(),
    }
}

/// Records with their locations: JSON arrays by 1-based index, JSONL by
/// 1-based line number.
fn records(text: &str) -> Result<Vec<(Location, Value)>, DatasetError> {
    let whole = if text.trim_start().starts_with('[') {
        Some(
            serde_json::from_str::<Value>(text)
                .map_err(|e| malformed(Location::Line(e.line()), e.to_string()))?,
        )
    } else {
        // a single object holding `examples` is a BIG-bench task file
        serde_json::from_str::<Value>(text)
            .ok()
            .filter(|v| v.get("examples").is_some())
    };
    if let Some(v) = whole {
        let items = match v {
            Value::Array(items) => items,
            Value::Object(mut o) => match o.remove("examples") {
                Some(Value::Array(items)) => items,
                _ => return Err(malformed(Location::Line(1), "`examples` is not an array")),
            },
            _ => return Err(malformed(Location::Line(1), "expected an array of records")),
        };
        return Ok(items
            .into_iter()
            .enumerate()
            .map(|(i, v)| (Location::Record(i + 1), v))
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| malformed(Location::Line(i + 1), e.to_string()))?;
        out.push((Location::Line(i + 1), v));
    }
    Ok(out)
}

fn str_field<'a>(v: &'a Value, key: &str, at: Location) -> Result<&'a str, DatasetError> {
    match v.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(Value::Number(_)) | Some(Value::Bool(_)) => Err(malformed(at, format!("`{key}` is not a string"))),
        _ => Err(malformed(at, format!("missing `{key}`"))),
    }
}

fn id_field(v: &Value, key: &str, at: Location) -> Result<String, DatasetError> {
    match v.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(malformed(at, format!("missing `{key}`"))),
    }
}

fn build(id: String, text: &str, gold: Vec<String>, at: Location) -> Result<Question, DatasetError> {
    let gold: Vec<String> = gold
        .into_iter()
        .map(|g| g.trim().to_string())
        .filter(|g| !g.is_empty())
        .collect();
    if gold.is_empty() {
        return Err(malformed(at, "no non-empty gold answer"));
    }
    let q = Question {
        id,
        text: text.trim().to_string(),
        gold_answers: gold,
        metadata: BTreeMap::new(),
    };
    q.validate().map_err(|e| malformed(at, e.to_string()))?;
    Ok(q)
}

fn bool_answer(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn parse_record(format: DatasetFormat, index: usize, v: &Value, at: Location) -> Result<Question, DatasetError> {
    match format {
        DatasetFormat::Generic => {
            let answers = match v.get("answers") {
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).ok_or_else(|| malformed(at, "non-string answer")))
                    .collect::<Result<Vec<_>, _>>()?,
                _ => return Err(malformed(at, "missing `answers` array")),
            };
            build(id_field(v, "id", at)?, str_field(v, "question", at)?, answers, at)
        }
        DatasetFormat::Hotpotqa | DatasetFormat::TwoWiki => {
            let id = id_field(v, "_id", at).or_else(|_| id_field(v, "id", at))?;
            let mut q = build(id, str_field(v, "question", at)?, vec![str_field(v, "answer", at)?.to_string()], at)?;
            if let Some(Value::String(t)) = v.get("type") {
                q.metadata.insert("type".into(), t.clone());
            }
            if let Some(Value::String(l)) = v.get("level") {
                q.metadata.insert("level".into(), l.clone());
            }
            Ok(q)
        }
        DatasetFormat::Musique => {
            let mut gold = vec![str_field(v, "answer", at)?.to_string()];
            if let Some(Value::Array(aliases)) = v.get("answer_aliases") {
                gold.extend(aliases.iter().filter_map(|a| a.as_str().map(str::to_string)));
            }
            build(id_field(v, "id", at)?, str_field(v, "question", at)?, gold, at)
        }
        DatasetFormat::Strategyqa => {
            if let Some(input) = v.get("input").and_then(Value::as_str) {
                // BIG-bench task layout
                let scores = v
                    .get("target_scores")
                    .and_then(Value::as_object)
                    .ok_or_else(|| malformed(at, "missing `target_scores`"))?;
                let yes = scores.get("Yes").and_then(Value::as_f64).unwrap_or(0.0);
                let no = scores.get("No").and_then(Value::as_f64).unwrap_or(0.0);
                if yes == no {
                    return Err(malformed(at, "ambiguous `target_scores`"));
                }
                return build(format!("sqa-{}", index + 1), input, vec![bool_answer(yes > no)], at);
            }
            let answer = match v.get("answer") {
                Some(Value::Bool(b)) => *b,
                Some(Value::String(s)) if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("yes") => true,
                Some(Value::String(s)) if s.eq_ignore_ascii_case("false") || s.eq_ignore_ascii_case("no") => false,
                _ => return Err(malformed(at, "missing boolean `answer`")),
            };
            let id = id_field(v, "qid", at).or_else(|_| id_field(v, "id", at))?;
            build(id, str_field(v, "question", at)?, vec![bool_answer(answer)], at)
        }
    }
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<Question>, DatasetError> {
    records(text)?
        .iter()
        .enumerate()
        .map(|(i, (at, v))| parse_record(format, i, v, *at))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Question>, DatasetError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_dataset(&text, format)
}
