//! Reference implementations written independently of the library, used as
//! test oracles. They favor obviousness over speed.

use std::collections::BTreeMap;
use std::path::Path;

// ---- answer metrics ----

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~\u{2018}\u{2019}\u{201C}\u{201D}\u{2013}\u{2014}\u{2026}\u{00AB}\u{00BB}\u{00BF}\u{00A1}\u{00B7}";

pub fn norm_tokens(s: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for ch in s.chars() {
        for lc in ch.to_lowercase() {
            if !PUNCTUATION.contains(lc) {
                cleaned.push(lc);
            }
        }
    }
    let mut out = Vec::new();
    for tok in cleaned.split_whitespace() {
        if tok != "a" && tok != "an" && tok != "the" {
            out.push(tok.to_string());
        }
    }
    out
}

/// Tries every start offset and compares token by token.
pub fn cover(pred: &str, golds: &[String]) -> u8 {
    let p = norm_tokens(pred);
    for g in golds {
        let g = norm_tokens(g);
        if g.is_empty() {
            if p.is_empty() {
                return 1;
            }
            continue;
        }
        for start in 0..p.len() {
            let mut ok = start + g.len() <= p.len();
            let mut j = 0;
            while ok && j < g.len() {
                ok = p[start + j] == g[j];
                j += 1;
            }
            if ok {
                return 1;
            }
        }
    }
    0
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Multiset overlap as the sum of per-token minimum counts.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    let p = norm_tokens(pred);
    let mut best = 0.0f64;
    for g in golds {
        let g = norm_tokens(g);
        let score = if p.is_empty() && g.is_empty() {
            1.0
        } else if p.is_empty() || g.is_empty() {
            0.0
        } else {
            let (cp, cg) = (counts(&p), counts(&g));
            let shared: usize = cp.iter().map(|(t, n)| (*n).min(*cg.get(t).unwrap_or(&0))).sum();
            (2 * shared) as f64 / (p.len() + g.len()) as f64
        };
        if score > best {
            best = score;
        }
    }
    best
}

// ---- BM25 ----

pub struct OracleDoc {
    pub id: String,
    pub tokens: Vec<String>,
}

fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn oracle_docs(corpus_jsonl: &str) -> Vec<OracleDoc> {
    corpus_jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let title = v["title"].as_str().unwrap_or("");
            let body = v["body"].as_str().unwrap();
            let mut tokens = words(title);
            tokens.extend(words(body));
            OracleDoc {
                id: v["id"].as_str().unwrap().to_string(),
                tokens,
            }
        })
        .collect()
}

/// Scores every document with the textbook formula, drops zero scores,
/// orders by score then id.
pub fn bm25_rank(docs: &[OracleDoc], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.tokens.len() as f64).sum::<f64>() / n;
    let mut scored = Vec::new();
    for d in docs {
        let dl = d.tokens.len() as f64;
        let mut score = 0.0;
        for q in words(query) {
            let tf = d.tokens.iter().filter(|t| **t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|o| o.tokens.contains(&q)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if score > 0.0 {
            scored.push((d.id.clone(), score));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

// ---- batch windows ----

/// 1-based document numbers per window.
pub fn windows(n: usize, b: usize) -> Vec<Vec<usize>> {
    let numbers: Vec<usize> = (1..=n).collect();
    numbers.chunks(b).map(<[usize]>::to_vec).collect()
}

// ---- corpus statistics ----

#[derive(Debug, PartialEq)]
pub struct Recount {
    pub count: usize,
    pub avg_instruction_len: f64,
    pub avg_target_len: f64,
    pub avg_gold_docs: f64,
    pub avg_gold_doc_len: f64,
}

/// Recounts statistics straight from an emitted JSONL corpus, reading it as
/// untyped JSON.
pub fn recount(path: &Path) -> Recount {
    let text = std::fs::read_to_string(path).unwrap();
    let (mut n, mut instr, mut target, mut gold_docs, mut gold_len) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let Some(verdict) = v.get("verdict") {
            if verdict != "keep" {
                continue;
            }
        }
        n += 1;
        instr += v["instruction"].as_str().unwrap().split_whitespace().count();
        target += v["target"].as_str().unwrap().split_whitespace().count();
        let gold_id = v["gold_doc_id"].as_str().unwrap();
        for d in v["documents"].as_array().unwrap() {
            if d["id"] == gold_id {
                gold_docs += 1;
                gold_len += d["body"].as_str().unwrap().split_whitespace().count();
            }
        }
    }
    let mean = |x: usize| ((x as f64 / n as f64) * 100.0).round() / 100.0;
    Recount {
        count: n,
        avg_instruction_len: mean(instr),
        avg_target_len: mean(target),
        avg_gold_docs: mean(gold_docs),
        avg_gold_doc_len: mean(gold_len),
    }
}
