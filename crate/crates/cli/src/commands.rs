use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use hopground::distill::{self, DropReason, SynthesisConfig, Verdict};
use hopground::eval::{self, load_dataset, DatasetFormat, Prediction, Summary};
use hopground::llm::{LlmClient, LlmSource, OpenAiClient, OpenAiConfig, ScriptBook, ScriptFile, ScriptedLlm};
use hopground::pipeline::{answer_dataset, RetrieverKind};
use hopground::retrieval::{load_corpus, CorpusIndex, ExternalRetriever, Retriever};
use hopground::{Termination, Trajectory};
use log::info;
use serde::Serialize;

use crate::config::FileConfig;
use crate::{EvalArgs, IndexArgs, Malformed, RunArgs, StatsArgs, SynthArgs};

pub fn index(a: IndexArgs) -> Result<()> {
    let docs = load_corpus(&a.corpus).with_context(|| format!("reading corpus {}", a.corpus.display()))?;
    let index = CorpusIndex::build(docs).with_context(|| format!("indexing {}", a.corpus.display()))?;
    index.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "indexed {} documents ({} terms) -> {}",
        index.len(),
        index.vocabulary_size(),
        a.out.display()
    );
    Ok(())
}

/// An LLM source plus whether it is one shared script, whose replies are
/// consumed in call order and therefore require sequential execution.
struct Llms {
    source: Arc<dyn LlmSource>,
    shared_script: bool,
}

fn llm_source(script: Option<&Path>, live: impl FnOnce() -> OpenAiConfig) -> Result<Llms> {
    if let Some(path) = script {
        let file = ScriptFile::load(path).with_context(|| format!("loading LLM script {}", path.display()))?;
        return Ok(match file {
            ScriptFile::Shared(steps) => {
                let client: Arc<dyn LlmClient> = Arc::new(ScriptedLlm::new(steps));
                Llms {
                    source: Arc::new(client),
                    shared_script: true,
                }
            }
            ScriptFile::PerQuestion(map) => Llms {
                source: Arc::new(ScriptBook::new(map)),
                shared_script: false,
            },
        });
    }
    let client: Arc<dyn LlmClient> = Arc::new(live_client(live())?);
    Ok(Llms {
        source: Arc::new(client),
        shared_script: false,
    })
}

fn live_client(config: OpenAiConfig) -> Result<OpenAiClient> {
    if config.api_key.is_none() && config.base_url == OpenAiConfig::default().base_url {
        bail!(
            "no LLM backend: set {} (and optionally {}) or pass a script",
            hopground::llm::API_KEY_ENV,
            hopground::llm::BASE_URL_ENV
        );
    }
    Ok(OpenAiClient::new(config)?)
}

fn build_retriever(cfg: &FileConfig) -> Result<Box<dyn Retriever>> {
    let r = &cfg.retrieval;
    Ok(match cfg.pipeline.retriever {
        RetrieverKind::Bm25 => {
            if let Some(path) = &r.index {
                Box::new(CorpusIndex::load(path).with_context(|| format!("loading index {}", path.display()))?)
            } else if let Some(path) = &r.corpus {
                let docs = load_corpus(path).with_context(|| format!("reading corpus {}", path.display()))?;
                Box::new(CorpusIndex::build(docs).with_context(|| format!("indexing {}", path.display()))?)
            } else {
                bail!("the bm25 retriever needs a corpus or an index (--corpus / --index)");
            }
        }
        RetrieverKind::External => {
            let Some(url) = &r.url else {
                bail!("the external retriever needs a URL (--retriever-url)");
            };
            Box::new(ExternalRetriever::new(url.clone(), r.method)?)
        }
    })
}

#[derive(Debug, Default, Serialize)]
struct Totals {
    questions: usize,
    hops: usize,
    llm_calls: u64,
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
    finished: usize,
    max_hops_reached: usize,
    failures: usize,
}

#[derive(Debug, Serialize)]
struct FailureNote<'a> {
    question_id: &'a str,
    error: &'a str,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    config: &'a FileConfig,
    dataset: &'a Path,
    format: DatasetFormat,
    retriever: RetrieverKind,
    /// `None` means the built-in templates.
    templates: Option<&'a Path>,
    started_at: DateTime<Utc>,
    finished_at: DateTime<Utc>,
    totals: Totals,
    failures: Vec<FailureNote<'a>>,
}

fn totals(trajectories: &[Trajectory]) -> Totals {
    let mut t = Totals {
        questions: trajectories.len(),
        ..Totals::default()
    };
    for tr in trajectories {
        t.hops += tr.hops.len();
        t.llm_calls += tr.llm_calls as u64;
        t.prompt_tokens += tr.token_usage.total.prompt_tokens;
        t.completion_tokens += tr.token_usage.total.completion_tokens;
        match tr.termination {
            Termination::FinishSignal => t.finished += 1,
            Termination::MaxHopsReached => t.max_hops_reached += 1,
            Termination::ParseFailure => t.failures += 1,
        }
    }
    t.total_tokens = t.prompt_tokens + t.completion_tokens;
    t
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(a: RunArgs) -> Result<()> {
    let started_at = Utc::now();
    let mut cfg = FileConfig::load_or_default(a.config.as_deref())?;
    let p = &mut cfg.pipeline;
    p.max_hops = a.max_hops.unwrap_or(p.max_hops);
    p.top_k = a.top_k.unwrap_or(p.top_k);
    p.batch_size = a.batch_size.unwrap_or(p.batch_size);
    p.retriever = a.retriever.unwrap_or(p.retriever);
    p.concurrency = a.concurrency.unwrap_or(p.concurrency);
    p.strict_citation |= a.strict_citation;
    let r = &mut cfg.retrieval;
    if a.corpus.is_some() || a.index.is_some() {
        r.corpus = a.corpus.clone();
        r.index = a.index.clone();
    }
    r.url = a.retriever_url.clone().or(r.url.take());
    cfg.llm.script = a.llm_script.clone().or(cfg.llm.script.take());
    cfg.llm.model = a.model.clone().unwrap_or(cfg.llm.model);
    cfg.prompts.dir = a.templates.clone().or(cfg.prompts.dir.take());
    cfg.pipeline.validate().context("invalid configuration")?;

    let prompts = cfg.prompts.load()?;
    let llms = llm_source(cfg.llm.script.as_deref(), || cfg.llm.openai(&cfg.llm.model))?;
    if llms.shared_script && cfg.pipeline.concurrency > 1 {
        info!("shared LLM script: running questions one at a time");
        cfg.pipeline.concurrency = 1;
    }
    let retriever = build_retriever(&cfg)?;
    let questions = load_dataset(&a.dataset, a.format)
        .with_context(|| format!("loading dataset {}", a.dataset.display()))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let done = AtomicUsize::new(0);
    let n = questions.len();
    let trajectories = answer_dataset(
        &questions,
        &cfg.pipeline,
        llms.source.as_ref(),
        retriever.as_ref(),
        &prompts,
        |_, t| {
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            info!("[{k}/{n}] {} -> {:?} ({} hops)", t.question.id, t.termination, t.hops.len());
        },
    )?;

    let traj_path = a.out.join("trajectories.jsonl");
    write_jsonl(&traj_path, &trajectories)?;
    let failures = trajectories
        .iter()
        .filter(|t| t.is_failure())
        .map(|t| FailureNote {
            question_id: &t.question.id,
            error: t.error.as_deref().unwrap_or("unparseable deduction output"),
        })
        .collect();
    let manifest = RunManifest {
        config: &cfg,
        dataset: &a.dataset,
        format: a.format,
        retriever: cfg.pipeline.retriever,
        templates: cfg.prompts.dir.as_deref(),
        started_at,
        finished_at: Utc::now(),
        totals: totals(&trajectories),
        failures,
    };
    let manifest_path = a.out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    let t = &manifest.totals;
    println!(
        "{} questions: {} finished, {} hit max hops, {} failed; {} LLM calls, {} tokens -> {}",
        t.questions,
        t.finished,
        t.max_hops_reached,
        t.failures,
        t.llm_calls,
        t.total_tokens,
        a.out.display()
    );
    Ok(())
}

fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| Malformed(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

/// Pairs trajectories with dataset questions; any id on one side only is an
/// error listing the ids.
fn align(trajectories: &[Trajectory], dataset: &[hopground::Question]) -> Result<Vec<Prediction>> {
    let by_id: HashMap<&str, &hopground::Question> = dataset.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut unknown = Vec::new();
    for t in trajectories {
        *seen.entry(t.question.id.as_str()).or_default() += 1;
        if !by_id.contains_key(t.question.id.as_str()) {
            unknown.push(t.question.id.as_str());
        }
    }
    let missing: Vec<&str> = dataset
        .iter()
        .map(|q| q.id.as_str())
        .filter(|id| !seen.contains_key(id))
        .collect();
    let mut dupes: Vec<&str> = seen.iter().filter(|(_, &c)| c > 1).map(|(id, _)| *id).collect();
    dupes.sort_unstable();
    let mut problems = Vec::new();
    if !missing.is_empty() {
        problems.push(format!("no trajectory for dataset ids: {}", missing.join(", ")));
    }
    if !unknown.is_empty() {
        problems.push(format!("trajectory ids not in dataset: {}", unknown.join(", ")));
    }
    if !dupes.is_empty() {
        problems.push(format!("duplicate trajectory ids: {}", dupes.join(", ")));
    }
    if !problems.is_empty() {
        return Err(Malformed(problems.join("; ")).into());
    }
    Ok(trajectories
        .iter()
        .map(|t| {
            let q = by_id[t.question.id.as_str()];
            Prediction {
                question_id: q.id.clone(),
                question: q.text.clone(),
                prediction: t.final_answer.clone(),
                gold_answers: q.gold_answers.clone(),
            }
        })
        .collect())
}

fn print_summary(s: &Summary) {
    let mut line = format!("Acc {:.2}  F1 {:.2}", s.acc, s.f1);
    if let Some(j) = s.acc_judge {
        line.push_str(&format!("  Acc\u{2020} {j:.2}"));
    }
    println!("{line}  (n={})", s.count);
    if s.judge_flagged > 0 {
        println!("{} judge replies were unreadable and counted as No", s.judge_flagged);
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = FileConfig::load_or_default(a.config.as_deref())?;
    let trajectories = load_trajectories(&a.trajectories)?;
    let dataset = load_dataset(&a.dataset, a.format)
        .with_context(|| format!("loading dataset {}", a.dataset.display()))?;
    let preds = align(&trajectories, &dataset)?;
    let mut records = eval::score_all(&preds)?;

    if a.judge || a.judge_script.is_some() {
        let prompts = cfg.prompts.load()?;
        let (client, workers): (Arc<dyn LlmClient>, usize) = match &a.judge_script {
            Some(path) => match ScriptFile::load(path).with_context(|| format!("loading {}", path.display()))? {
                ScriptFile::Shared(steps) => (Arc::new(ScriptedLlm::new(steps)), 1),
                ScriptFile::PerQuestion(_) => bail!("the judge script must be a JSON array of replies"),
            },
            None => {
                let model = a.model.clone().unwrap_or_else(|| cfg.llm.model.clone());
                (Arc::new(live_client(cfg.llm.openai(&model))?), a.concurrency.max(1))
            }
        };
        eval::judge_all(
            client.as_ref(),
            &prompts,
            &preds,
            &mut records,
            workers,
            cfg.pipeline.decoding.max_output_tokens,
        )?;
    }
    let summary = eval::aggregate(&records)?;

    let out_dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.trajectories.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("eval.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    w.write_record(["question_id", "acc", "f1", "acc_judge"])?;
    for r in &records {
        let judge = match r.acc_judge {
            Some(eval::Verdict::Yes) => "1",
            Some(eval::Verdict::No) => "0",
            None => "",
        };
        w.write_record([r.question_id.as_str(), &r.acc.to_string(), &r.f1.to_string(), judge])?;
    }
    w.flush()?;
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;
    print_summary(&summary);
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = FileConfig::load_or_default(a.config.as_deref())?;
    cfg.prompts.dir = a.templates.clone().or(cfg.prompts.dir.take());
    let concurrency = a.concurrency.unwrap_or(cfg.pipeline.concurrency);
    if concurrency == 0 {
        bail!("concurrency must be at least 1");
    }
    cfg.pipeline.decoding.validate().context("invalid decoding parameters")?;
    let prompts = cfg.prompts.load()?;
    let student_model = a.student_model.clone().unwrap_or_else(|| cfg.llm.model.clone());
    let teacher_model = a.teacher_model.clone().unwrap_or_else(|| cfg.llm.model.clone());
    let student = llm_source(a.student_script.as_deref(), || cfg.llm.openai(&student_model))?;
    let teacher = llm_source(a.teacher_script.as_deref(), || cfg.llm.openai(&teacher_model))?;
    let inputs = distill::load_inputs(&a.input).with_context(|| format!("loading {}", a.input.display()))?;

    let config = SynthesisConfig {
        seed: a.seed,
        noise_docs: a.noise_docs,
        decoding: cfg.pipeline.decoding,
        concurrency: if student.shared_script || teacher.shared_script {
            1
        } else {
            concurrency
        },
    };
    let examples = distill::synthesize_corpus(
        &inputs,
        student.source.as_ref(),
        teacher.source.as_ref(),
        &prompts,
        &config,
    );
    let written = distill::emit_corpus(&examples, &a.out, a.include_dropped)
        .with_context(|| format!("writing {}", a.out.display()))?;

    let mut dropped: BTreeMap<&'static str, usize> = BTreeMap::new();
    for e in &examples {
        if let Verdict::Drop(reason) = e.verdict {
            let name = match reason {
                DropReason::EmptyEvidence => "empty_evidence",
                DropReason::MissingRevision => "missing_revision",
                DropReason::Misaligned => "misaligned",
                DropReason::LlmError => "llm_error",
            };
            *dropped.entry(name).or_default() += 1;
        }
    }
    let kept = examples.iter().filter(|e| e.verdict.is_keep()).count();
    let reasons: Vec<String> = dropped.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!(
        "kept {kept}, dropped {}{}; wrote {written} lines -> {}",
        examples.len() - kept,
        if reasons.is_empty() {
            String::new()
        } else {
            format!(" ({})", reasons.join(", "))
        },
        a.out.display()
    );
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let examples = distill::load_corpus_file(&a.corpus).with_context(|| format!("loading {}", a.corpus.display()))?;
    let stats = distill::dataset_stats(&examples)?;
    let json = serde_json::to_string_pretty(&stats)?;
    println!("{json}");
    if let Some(out) = &a.out {
        std::fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
