use vqaret::dense::{Linear, Matrix, Vocab, Weights};
use vqaret::training::{train_from, Validation};
use vqaret::{
    batch_loss_and_grads, build_training_data, build_validation_collection, candidates_for,
    Collection, DualEncoderParams, EncoderShape, MultiModalQuery, NegativeSamplingStrategy,
    Passage, RankedList, TrainConfig, TrainingInstance,
};
use NegativeSamplingStrategy::*;

fn inst(q: &str, pos: &str, neg: &str) -> TrainingInstance {
    TrainingInstance {
        query_id: q.into(),
        positive_id: pos.into(),
        negative_id: neg.into(),
    }
}

#[test]
fn candidate_set_sizes() {
    let one = [inst("q", "a", "b")];
    for s in NegativeSamplingStrategy::ALL {
        assert_eq!(candidates_for(&one, 0, s).len(), 2, "{s}");
    }
    let four: Vec<_> = (0..4)
        .map(|i| inst(&format!("q{i}"), &format!("p{i}"), &format!("n{i}")))
        .collect();
    let sizes: Vec<usize> = NegativeSamplingStrategy::ALL
        .iter()
        .map(|&s| candidates_for(&four, 1, s).len() - 1)
        .collect();
    assert_eq!(sizes, [1, 4, 4, 7]);
    assert_eq!(candidates_for(&four, 2, RNegIbAll)[0], "p2");
    assert_eq!(candidates_for(&four[..2], 0, RNegIbPos), ["p0", "n0", "p1"]);
}

#[test]
fn own_positive_never_a_negative() {
    // the same query twice with the same positive: only the exact id is dropped
    let batch = [
        inst("q", "p", "n1"),
        inst("q", "p", "n2"),
        inst("q", "x", "p"),
    ];
    let c = candidates_for(&batch, 0, RNegIbAll);
    assert_eq!(c, ["p", "n1", "n2", "x"]);
    let c = candidates_for(&batch, 2, RNegIbNeg);
    assert_eq!(c, ["x", "n1", "n2", "p"]);
}

fn toy_world() -> (Collection, Vec<MultiModalQuery>) {
    let passages = Collection::new(vec![
        Passage::new("p1", "alpha beta").unwrap(),
        Passage::new("p2", "beta gamma gamma").unwrap(),
        Passage::new("p3", "delta").unwrap(),
        Passage::new("p4", "zeta").unwrap(),
    ])
    .unwrap();
    let mut q1 = MultiModalQuery::new("q1", "alpha gamma");
    q1.visual_features = Some(vec![vec![0.3, -0.2], vec![0.1, 0.5]]);
    let mut q2 = MultiModalQuery::new("q2", "delta unknownword");
    q2.visual_features = Some(vec![vec![-0.4, 0.9]]);
    (passages, vec![q1, q2])
}

fn zero_params() -> DualEncoderParams {
    let vocab = Vocab::from_tokens(["alpha", "beta", "gamma", "delta"].map(String::from));
    DualEncoderParams {
        vocab,
        weights: Weights {
            token_embeddings: Matrix::zeros(5, 3),
            query_text_projection: Linear::zeros(3, 4),
            query_visual_projection: Some(Linear::zeros(2, 4)),
            passage_projection: Linear::zeros(3, 4),
        },
    }
}

#[test]
fn uniform_logits_give_log_candidate_count() {
    let (passages, queries) = toy_world();
    let params = zero_params();
    let batch = [inst("q1", "p1", "p2")];
    let (loss, _) = batch_loss_and_grads(&params, &batch, RNeg, &queries, &passages, true).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-15);

    let batch = [inst("q1", "p1", "p2"), inst("q2", "p3", "p4")];
    let (loss, _) =
        batch_loss_and_grads(&params, &batch, RNegIbAll, &queries, &passages, true).unwrap();
    // both instances have 1 + 2 + 1 = 4 candidates
    assert!((loss - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn raising_the_positive_logit_lowers_the_loss() {
    let (passages, queries) = toy_world();
    let mut params = zero_params();
    // query text tower reads "alpha"; passage tower reads "alpha" too
    params.weights.token_embeddings.row_mut(1)[0] = 1.0;
    params.weights.query_text_projection.weight.row_mut(0)[0] = 1.0;
    let batch = [inst("q1", "p1", "p2")];
    let mut last = f64::INFINITY;
    for scale in [0.0, 0.5, 1.0, 2.0, 4.0] {
        params.weights.passage_projection.weight.row_mut(0)[0] = scale;
        let (loss, _) =
            batch_loss_and_grads(&params, &batch, RNeg, &queries, &passages, false).unwrap();
        assert!(loss < last || scale == 0.0);
        assert!(loss >= 0.0);
        last = loss;
    }
}

#[test]
fn untouched_rows_have_zero_gradient() {
    let (passages, queries) = toy_world();
    let shape = EncoderShape {
        embedding_dim: 3,
        projection_size: 4,
        visual_dim: Some(2),
    };
    let vocab =
        Vocab::from_tokens(["alpha", "beta", "gamma", "delta", "zeta", "omega"].map(String::from));
    let params = DualEncoderParams::init(vocab.clone(), shape, 3).unwrap();
    let batch = [inst("q1", "p1", "p2")];
    let (_, grad) =
        batch_loss_and_grads(&params, &batch, RNegIbAll, &queries, &passages, true).unwrap();
    for token in ["delta", "zeta", "omega"] {
        let row = grad.token_embeddings.row(vocab.id(token) as usize);
        assert!(row.iter().all(|&g| g == 0.0), "{token}: {row:?}");
    }
    let row = grad.token_embeddings.row(vocab.id("beta") as usize);
    assert!(row.iter().any(|&g| g != 0.0));
    // text-only: the visual tower gets nothing
    let (_, grad) =
        batch_loss_and_grads(&params, &batch, RNeg, &queries, &passages, false).unwrap();
    let v = grad.query_visual_projection.unwrap();
    assert!(v.weight.data.iter().chain(&v.bias).all(|&g| g == 0.0));
}

#[test]
fn unknown_ids_are_errors() {
    let (passages, queries) = toy_world();
    let params = zero_params();
    let r = batch_loss_and_grads(
        &params,
        &[inst("q9", "p1", "p2")],
        RNeg,
        &queries,
        &passages,
        true,
    );
    assert!(matches!(r, Err(vqaret::Error::UnknownQuery(_))));
    let r = batch_loss_and_grads(
        &params,
        &[inst("q1", "p1", "p9")],
        RNeg,
        &queries,
        &passages,
        true,
    );
    assert!(matches!(r, Err(vqaret::Error::UnknownPassage(_))));
}

fn answer_world() -> (Collection, Vec<MultiModalQuery>, Vec<RankedList>) {
    let mut passages = Vec::new();
    for i in 0..12 {
        let text = if i % 3 == 0 {
            format!("the answer foo {i}")
        } else {
            format!("nothing {i}")
        };
        passages.push(Passage::new(format!("p{i:02}"), text).unwrap());
    }
    let mut q = MultiModalQuery::new("q", "what");
    q.answers = vec!["foo".into()];
    let mut none = MultiModalQuery::new("none", "what");
    none.answers = vec!["bar".into()];
    let run = vec![
        RankedList::from_scores(
            "q",
            (0..12)
                .map(|i| (format!("p{i:02}"), 100.0 - i as f64))
                .collect(),
        ),
        RankedList::from_scores("none", vec![("p01".into(), 1.0)]),
    ];
    (Collection::new(passages).unwrap(), vec![q, none], run)
}

#[test]
fn training_data_counts_and_purity() {
    let (passages, queries, run) = answer_world();
    let data = build_training_data(&run, &passages, &queries, 5, 5, 7).unwrap();
    // 4 positives (p00, p03, p06, p09) -> 4 * 5
    assert_eq!(data.instances.len(), 20);
    assert_eq!(data.skipped_queries, 1);
    for i in &data.instances {
        let pos: usize = i.positive_id[1..].parse().unwrap();
        let neg: usize = i.negative_id[1..].parse().unwrap();
        assert_eq!(pos % 3, 0);
        assert_ne!(neg % 3, 0);
    }
    // each positive draws 5 distinct negatives (8 available)
    for chunk in data.instances.chunks(5) {
        let mut negs: Vec<_> = chunk.iter().map(|i| &i.negative_id).collect();
        negs.sort();
        negs.dedup();
        assert_eq!(negs.len(), 5);
    }
    assert_eq!(
        data,
        build_training_data(&run, &passages, &queries, 5, 5, 7).unwrap()
    );
    assert_ne!(
        data,
        build_training_data(&run, &passages, &queries, 5, 5, 8).unwrap()
    );
    let capped = build_training_data(&run, &passages, &queries, 2, 3, 7).unwrap();
    assert_eq!(capped.instances.len(), 6);
}

#[test]
fn validation_collection_is_a_union() {
    let a = RankedList::from_scores(
        "a",
        (0..30).map(|i| (format!("x{i:02}"), -(i as f64))).collect(),
    );
    let b = RankedList::from_scores(
        "b",
        (0..30).map(|i| (format!("y{i:02}"), -(i as f64))).collect(),
    );
    assert_eq!(build_validation_collection(&[a.clone(), b], 20).len(), 40);
    assert_eq!(build_validation_collection(&[a.clone(), a], 20).len(), 20);
}

fn separable_task() -> (Collection, Vec<MultiModalQuery>, Vec<TrainingInstance>) {
    // answers keyed to the visual class; text is identical for every query
    let mut passages = Vec::new();
    let mut queries = Vec::new();
    let mut instances = Vec::new();
    let protos = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, -1.0],
    ];
    for (c, proto) in protos.iter().enumerate() {
        passages
            .push(Passage::new(format!("pos{c}"), format!("answer{c} about class{c}")).unwrap());
        passages.push(Passage::new(format!("neg{c}"), format!("filler{c} words here")).unwrap());
        for r in 0..5 {
            let mut q = MultiModalQuery::new(format!("q{c}_{r}"), "what is it");
            q.answers = vec![format!("answer{c}")];
            let jitter = r as f64 * 0.05;
            q.visual_features = Some(vec![proto.iter().map(|x| x + jitter).collect()]);
            instances.push(inst(&q.id, &format!("pos{c}"), &format!("neg{c}")));
            queries.push(q);
        }
    }
    (Collection::new(passages).unwrap(), queries, instances)
}

fn small_params(
    passages: &Collection,
    queries: &[MultiModalQuery],
    seed: u64,
) -> DualEncoderParams {
    let vocab = Vocab::build(
        passages
            .iter()
            .map(|p| p.text.as_str())
            .chain(queries.iter().map(|q| q.question.as_str())),
        1,
    );
    let shape = EncoderShape {
        embedding_dim: 8,
        projection_size: 8,
        visual_dim: Some(3),
    };
    DualEncoderParams::init(vocab, shape, seed).unwrap()
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let (passages, queries, instances) = separable_task();
    let params = small_params(&passages, &queries, 1);
    let config = TrainConfig {
        learning_rate: 0.0,
        eval_every_steps: 3,
        ..TrainConfig::default()
    };
    let ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
    let val = Validation {
        queries: &queries,
        collection: &ids,
    };
    let out = train_from(
        &config,
        params.clone(),
        &instances,
        &queries,
        &passages,
        &val,
    )
    .unwrap();
    assert_eq!(out.params, params);
    assert_eq!(out.total_steps, 10);
}

#[test]
fn same_seed_same_log() {
    let (passages, queries, instances) = separable_task();
    let ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
    let val = Validation {
        queries: &queries,
        collection: &ids,
    };
    let config = TrainConfig {
        eval_every_steps: 4,
        epochs: 3,
        ..TrainConfig::default()
    };
    let run = || {
        train_from(
            &config,
            small_params(&passages, &queries, 5),
            &instances,
            &queries,
            &passages,
            &val,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert!(a
        .log
        .iter()
        .all(|r| r.loss >= 0.0 && (0.0..=1.0).contains(&r.val_mrr)));
}

#[test]
fn loss_decreases_on_a_separable_task() {
    let (passages, queries, instances) = separable_task();
    let mut params = small_params(&passages, &queries, 11);
    // full-batch steps so that each step sees the same objective
    let mut losses = Vec::new();
    for _ in 0..100 {
        let (loss, grad) =
            batch_loss_and_grads(&params, &instances, RNegIbAll, &queries, &passages, true)
                .unwrap();
        losses.push(loss);
        params.weights.add_scaled(-0.05, &grad);
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{} then {}", w[0], w[1]);
    }
    assert!(losses[99] < 0.5 * losses[0]);
}

#[test]
fn divergence_is_reported_with_step() {
    let (passages, queries, instances) = separable_task();
    let mut params = small_params(&passages, &queries, 2);
    for t in params.weights.tensors_mut() {
        t.1.iter_mut().for_each(|x| *x *= 1e3);
    }
    let ids: Vec<String> = passages.iter().map(|p| p.id.clone()).collect();
    let config = TrainConfig {
        learning_rate: 1e6,
        ..TrainConfig::default()
    };
    let val = Validation {
        queries: &queries,
        collection: &ids,
    };
    let err = train_from(&config, params, &instances, &queries, &passages, &val).unwrap_err();
    assert!(matches!(err, vqaret::Error::Diverged { .. }), "{err}");
}
