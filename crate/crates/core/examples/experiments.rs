//! Runs the sparse comparison, the dense text-only vs. multi-modal
//! comparison, and the projection-size / negative-sampling sweeps on
//! synthetic data.
//!
//! `cargo run --release -p vqaret-core --example experiments -- [sparse|dense|projection|negatives] [seed]`

use std::time::Instant;

use vqaret::eval::{evaluate, paired_t_test};
use vqaret::training::{dense_run, train, Validation};
use vqaret::{
    build_store, build_training_data, build_validation_collection, synth_gen, Bm25Params,
    Collection, ExpansionMode, FusionMethod, InvertedIndex, MultiModalQuery,
    NegativeSamplingStrategy, TrainConfig,
};

fn sparse(seed: u64) -> vqaret::Result<()> {
    let data = synth_gen(seed, 2000, 200)?;
    let index = InvertedIndex::from_passages(&data.passages)?;
    let passages = Collection::new(data.passages.clone())?;
    let params = Bm25Params::default();
    let mut rows = Vec::new();
    for mode in ExpansionMode::ALL_MODES {
        for fusion in [
            FusionMethod::CombMax,
            FusionMethod::CombSum,
            FusionMethod::rrf(),
        ] {
            if mode == ExpansionMode::Orig && fusion != FusionMethod::CombMax {
                continue;
            }
            let run = index.retrieve_all(params, &data.queries, mode, fusion, 100)?;
            let r = evaluate(&run, &data.queries, &passages, 5)?;
            println!("{mode:>5} {fusion:>8}  {}", r.summary_line());
            rows.push(((mode, fusion), r));
        }
    }
    let get = |m, f| &rows.iter().find(|(k, _)| *k == (m, f)).unwrap().1;
    let orig = get(ExpansionMode::Orig, FusionMethod::CombMax);
    let obj = get(ExpansionMode::Obj, FusionMethod::CombMax);
    let cap = get(ExpansionMode::Cap, FusionMethod::CombSum);
    let t1 = paired_t_test(&cap.mrr_values(), &obj.mrr_values())?;
    let t2 = paired_t_test(&obj.mrr_values(), &orig.mrr_values())?;
    println!("cap/combsum vs obj/combmax: t={:.3} p={:.3e}", t1.t, t1.p);
    println!("obj/combmax vs orig:        t={:.3} p={:.3e}", t2.t, t2.p);
    Ok(())
}

struct Split {
    passages: Collection,
    train: Vec<MultiModalQuery>,
    val: Vec<MultiModalQuery>,
    test: Vec<MultiModalQuery>,
}

fn split(seed: u64) -> vqaret::Result<Split> {
    let data = synth_gen(seed, 2000, 1000)?;
    let mut q = data.queries;
    let test = q.split_off(800);
    let val = q.split_off(600);
    Ok(Split {
        passages: Collection::new(data.passages)?,
        train: q,
        val,
        test,
    })
}

fn train_and_test(s: &Split, config: &TrainConfig) -> vqaret::Result<(f64, f64)> {
    let all: Vec<_> = s.passages.passages().to_vec();
    let index = InvertedIndex::from_passages(&all)?;
    let p = Bm25Params::default();
    let run = index.retrieve_all(p, &s.train, ExpansionMode::Cap, FusionMethod::CombSum, 100)?;
    let data = build_training_data(&run, &s.passages, &s.train, 5, 5, config.seed)?;
    let val_run = index.retrieve_all(p, &s.val, ExpansionMode::Cap, FusionMethod::CombSum, 20)?;
    let val_ids: Vec<String> = build_validation_collection(&val_run, 20)
        .into_iter()
        .collect();
    let outcome = train(
        config,
        &data.instances,
        &s.train,
        &s.passages,
        &Validation {
            queries: &s.val,
            collection: &val_ids,
        },
    )?;
    let store = build_store(&outcome.params, s.passages.iter())?;
    let run = dense_run(&outcome.params, &store, &s.test, config.use_visual, 5)?;
    let test = evaluate(&run, &s.test, &s.passages, 5)?;
    Ok((outcome.best_val_mrr, test.mean_mrr_at_k))
}

fn main() -> vqaret::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("sparse");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = Instant::now();
    let base = TrainConfig {
        seed,
        embedding_dim: 32,
        projection_size: 32,
        eval_every_steps: 500,
        learning_rate: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.1),
        ..TrainConfig::default()
    };
    match what {
        "sparse" => sparse(seed)?,
        "dense" => {
            let s = split(seed)?;
            for use_visual in [false, true] {
                let (val, test) = train_and_test(
                    &s,
                    &TrainConfig {
                        use_visual,
                        ..base.clone()
                    },
                )?;
                println!("use_visual={use_visual}: val MRR@5={val:.4} test MRR@5={test:.4}");
            }
        }
        "projection" => {
            let s = split(seed)?;
            for n in [8, 16, 32, 64, 128] {
                let (val, _) = train_and_test(
                    &s,
                    &TrainConfig {
                        projection_size: n,
                        ..base.clone()
                    },
                )?;
                println!("n={n}: val MRR@5={val:.4}");
            }
        }
        "negatives" => {
            let s = split(seed)?;
            for strategy in NegativeSamplingStrategy::ALL {
                let (val, _) = train_and_test(
                    &s,
                    &TrainConfig {
                        strategy,
                        ..base.clone()
                    },
                )?;
                println!("{strategy}: val MRR@5={val:.4}");
            }
        }
        other => eprintln!("unknown experiment `{other}`"),
    }
    eprintln!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
