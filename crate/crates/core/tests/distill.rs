mod common;

use std::sync::Arc;

use common::synth_fixture;
use hopground::distill::{
    dataset_stats, emit_corpus, load_corpus_file, load_inputs, synthesize_corpus, DistillError, DropReason,
    SynthesisConfig, Verdict,
};
use hopground::eval::cover_em;
use hopground::llm::{LlmClient, ScriptedLlm};
use hopground::{parse_grounding, GroundingKind, PromptSet};

#[test]
fn emits_kept_examples_and_optionally_dropped_ones() {
    let fx = synth_fixture(8, 3);
    let examples = synthesize_corpus(&fx.inputs, &fx.student, &fx.teacher, &PromptSet::default(), &SynthesisConfig::default());
    let kept = examples.iter().filter(|e| e.verdict.is_keep()).count();
    assert_eq!((kept, fx.expected_kept), (6, 6));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    assert_eq!(emit_corpus(&examples, &path, false).unwrap(), 6);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(!text.contains("\"verdict\""));
    let back = load_corpus_file(&path).unwrap();
    assert!(back.iter().all(|e| e.verdict == Verdict::Keep));
    let original_kept: Vec<_> = examples.iter().filter(|e| e.verdict.is_keep()).cloned().collect();
    assert_eq!(back, original_kept);

    assert_eq!(emit_corpus(&examples, &path, true).unwrap(), 8);
    let all = load_corpus_file(&path).unwrap();
    assert_eq!(all, examples);
    let reasons: Vec<DropReason> = all
        .iter()
        .filter_map(|e| match e.verdict {
            Verdict::Drop(r) => Some(r),
            Verdict::Keep => None,
        })
        .collect();
    assert_eq!(reasons, [DropReason::MissingRevision, DropReason::Misaligned]);
}

#[test]
fn kept_targets_are_cited_and_aligned() {
    let fx = synth_fixture(12, 5);
    let examples = synthesize_corpus(&fx.inputs, &fx.student, &fx.teacher, &PromptSet::default(), &SynthesisConfig::default());
    for (e, input) in examples.iter().zip(&fx.inputs) {
        assert_eq!(e.id, input.question.id);
        assert_eq!(e.documents.len(), 10);
        assert_eq!(e.documents[e.gold_position - 1].id, input.gold_doc.id);
        assert!(e.instruction.contains(&input.question.text));
        if e.verdict.is_keep() {
            let g = parse_grounding(&e.target).unwrap();
            assert_eq!(g.kind, GroundingKind::Cited);
            assert_eq!(cover_em(g.revised_answer.as_deref().unwrap(), &[input.gold_answer()]).unwrap(), 1);
        }
    }
}

#[test]
fn student_sees_only_the_bare_question() {
    let fx = synth_fixture(1, 100);
    let student = Arc::new(ScriptedLlm::new(["guess"]));
    let teacher = Arc::new(ScriptedLlm::new([
        "<ref> The fact number 1 is Answer1 Value </ref> <revise> Answer1 Value </revise>",
    ]));
    let (s, t): (Arc<dyn LlmClient>, Arc<dyn LlmClient>) = (student.clone(), teacher.clone());
    let examples = synthesize_corpus(&fx.inputs, &s, &t, &PromptSet::default(), &SynthesisConfig::default());
    let calls = student.calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].messages.len(), 1);
    assert_eq!(calls[0].prompt_text(), fx.inputs[0].question.text);
    assert_eq!(examples[0].immediate_answer, "guess");
    assert!(teacher.calls()[0].prompt_text().contains("guess"));
}

#[test]
fn stats_over_kept_examples() {
    let fx = synth_fixture(16, 4);
    let examples = synthesize_corpus(&fx.inputs, &fx.student, &fx.teacher, &PromptSet::default(), &SynthesisConfig::default());
    let s = dataset_stats(&examples).unwrap();
    assert_eq!(s.count, fx.expected_kept);
    assert_eq!(s.avg_gold_docs, 1.0);
    assert!(matches!(dataset_stats(&[]), Err(DistillError::EmptyList)));
}

#[test]
fn input_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.jsonl");
    std::fs::write(&path, "not json\n").unwrap();
    assert!(matches!(load_inputs(&path), Err(DistillError::InputLine { line: 1, .. })));
}
