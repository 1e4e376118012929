use std::collections::HashMap;

use vqaret::corpus::{load_queries, Collection};
use vqaret::synth::VISUAL_DIM;
use vqaret::{contains_answer, synth_gen};

#[test]
fn same_seed_same_output() {
    let a = synth_gen(7, 400, 50).unwrap();
    let b = synth_gen(7, 400, 50).unwrap();
    assert_eq!(a, b);
    let c = synth_gen(8, 400, 50).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sizes_and_visual_dim() {
    let d = synth_gen(1, 500, 60).unwrap();
    assert_eq!(d.passages.len(), 500);
    assert_eq!(d.queries.len(), 60);
    for q in &d.queries {
        assert_eq!(q.visual_dim(), Some(VISUAL_DIM));
        assert!(!q.objects.is_empty());
        assert!(!q.captions.is_empty());
        assert!(!q.answers.is_empty());
    }
}

#[test]
fn every_query_has_an_answer_bearing_passage() {
    let d = synth_gen(2, 2000, 300).unwrap();
    for q in &d.queries {
        assert!(
            d.passages.iter().any(|p| contains_answer(p, &q.answers)),
            "{} has no positive",
            q.id
        );
    }
}

#[test]
fn question_text_is_ambiguous() {
    let d = synth_gen(0, 2000, 1000).unwrap();
    let mut answers_by_question: HashMap<&str, Vec<&str>> = HashMap::new();
    for q in &d.queries {
        answers_by_question
            .entry(q.question.as_str())
            .or_default()
            .push(q.answers[0].as_str());
    }
    let ambiguous = d
        .queries
        .iter()
        .filter(|q| {
            answers_by_question[q.question.as_str()]
                .iter()
                .any(|a| *a != q.answers[0])
        })
        .count();
    assert!(
        ambiguous * 10 >= d.queries.len() * 3,
        "only {ambiguous} ambiguous"
    );
}

#[test]
fn written_files_load_back() {
    let d = synth_gen(4, 200, 20).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p, q) = d.write(dir.path()).unwrap();
    assert_eq!(Collection::load(&p).unwrap().passages(), &d.passages[..]);
    assert_eq!(load_queries(&q).unwrap(), d.queries);
}

#[test]
fn too_small_is_rejected() {
    assert!(synth_gen(0, 5, 100).is_err());
}
