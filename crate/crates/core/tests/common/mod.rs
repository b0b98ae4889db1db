#![allow(dead_code)]

pub mod http;
pub mod oracle;

use std::path::PathBuf;

use std::collections::BTreeMap;

use hopground::distill::SynthesisInput;
use hopground::retrieval::{load_corpus, RetrievalError};
use hopground::{CorpusIndex, Document, Question, Retriever, ScriptBook, ScriptStep};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub struct Festival {
    pub question: Question,
    pub index: CorpusIndex,
    pub script: Vec<String>,
}

pub fn festival() -> Festival {
    let line = std::fs::read_to_string(fixture("festival/dataset.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    let question = Question::new(v["id"].as_str().unwrap(), v["question"].as_str().unwrap())
        .unwrap()
        .with_gold(["March and April"]);
    let index = CorpusIndex::build(load_corpus(fixture("festival/corpus.jsonl")).unwrap()).unwrap();
    let script: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(fixture("festival/script.json")).unwrap()).unwrap();
    Festival {
        question,
        index,
        script,
    }
}

/// Returns the same ranked list for every query.
pub struct FixedRetriever(pub Vec<Document>);

impl Retriever for FixedRetriever {
    fn retrieve(&self, _query: &str, top_k: usize) -> Result<Vec<Document>, RetrievalError> {
        Ok(self
            .0
            .iter()
            .take(top_k)
            .enumerate()
            .map(|(i, d)| d.clone().with_rank(i as u32 + 1))
            .collect())
    }
}

/// `n` documents `d1..dn`; body `i` contains the marker `document {i}x`,
/// which no other body contains.
pub fn ranked_docs(n: usize) -> Vec<Document> {
    (1..=n)
        .map(|i| Document::new(format!("d{i}"), format!("Title {i}"), format!("body of document {i}x")).unwrap())
        .collect()
}

pub fn step(i: usize, q: &str, a: &str) -> String {
    format!("Question {i}: {q}\nAnswer {i}: {a}")
}

pub fn cited(evidence: &str, revised: &str) -> String {
    format!("The document demonstrate <ref> {evidence} </ref>. <revise> {revised} </revise>")
}

pub const EMPTY: &str = "<ref> Empty </ref>";

pub fn finish(a: &str) -> String {
    format!("###Finish[{a}]")
}

/// Synthesis inputs with per-question student and teacher scripts. Every
/// `drop_every`-th input (1-based) gets a teacher reply that the filters
/// reject, cycling through the three rules; the rest are kept.
pub struct SynthFixture {
    pub inputs: Vec<SynthesisInput>,
    pub student: ScriptBook,
    pub teacher: ScriptBook,
    pub expected_kept: usize,
}

pub fn synth_fixture(n: usize, drop_every: usize) -> SynthFixture {
    let mut inputs = Vec::new();
    let mut student = BTreeMap::new();
    let mut teacher = BTreeMap::new();
    let mut kept = 0;
    for i in 1..=n {
        let id = format!("sq{i:03}");
        let answer = format!("Answer{i} Value");
        let filler = "word ".repeat(i % 7 * 3);
        let gold = Document::new(
            format!("gold{i}"),
            format!("Gold {i}"),
            format!("The fact number {i} is {answer}. {filler}End of gold passage."),
        )
        .unwrap();
        let noise = (0..12)
            .map(|j| {
                Document::new(
                    format!("noise{i}_{j}"),
                    "",
                    format!("Unrelated passage {j} {}", "noise ".repeat((i + j) % 5)),
                )
                .unwrap()
            })
            .collect();
        inputs.push(SynthesisInput {
            question: Question::new(id.clone(), format!("What is fact number {i}?"))
                .unwrap()
                .with_gold([answer.clone()]),
            gold_doc: gold,
            noise_docs: noise,
        });
        student.insert(id.clone(), vec![ScriptStep::Reply(format!("Fact {i} is probably unknown."))]);
        let reply = if i % drop_every == 0 {
            match (i / drop_every) % 3 {
                0 => "<ref> Empty </ref> none of the documents help.".to_string(),
                1 => format!("<ref> The fact number {i} is {answer} </ref> but no revision"),
                _ => format!("<ref> The fact number {i} </ref> <revise> something else </revise>"),
            }
        } else {
            kept += 1;
            let pad = "because ".repeat(i % 4);
            format!(
                "The document demonstrate <ref> The fact number {i} is {answer} </ref> {pad}. \
                 The revised answer is <revise> Fact {i} is {answer}. </revise>"
            )
        };
        teacher.insert(id, vec![ScriptStep::Reply(reply)]);
    }
    SynthFixture {
        inputs,
        student: ScriptBook::new(student),
        teacher: ScriptBook::new(teacher),
        expected_kept: kept,
    }
}
