use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vqaret::{
    synth_gen, Bm25Params, ExpansionMode, FusionMethod, InvertedIndex, QueryVector, RankedList,
    VectorStore,
};

fn bm25(c: &mut Criterion) {
    let data = synth_gen(0, 5000, 100).unwrap();
    let index = InvertedIndex::from_passages(&data.passages).unwrap();
    let params = Bm25Params::default();
    let mut group = c.benchmark_group("bm25");
    for mode in [ExpansionMode::Orig, ExpansionMode::Cap] {
        group.bench_function(BenchmarkId::new("retrieve", mode), |b| {
            b.iter(|| {
                for q in &data.queries[..20] {
                    black_box(
                        index
                            .retrieve(params, q, mode, FusionMethod::CombSum, 100)
                            .unwrap(),
                    );
                }
            })
        });
    }
    group.bench_function("build_5000", |b| {
        b.iter(|| InvertedIndex::from_passages(black_box(&data.passages)).unwrap())
    });
    group.finish();
}

fn mips(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (count, dim) = (50_000, 128);
    let data: Vec<f32> = (0..count * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let ids = (0..count).map(|i| format!("p{i}")).collect();
    let store = VectorStore::from_rows(ids, dim, data).unwrap();
    let query = QueryVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut group = c.benchmark_group("mips_50k_x128");
    for threads in [1, 4] {
        group.bench_with_input(BenchmarkId::new("top100", threads), &threads, |b, &t| {
            b.iter(|| {
                store
                    .search_with_threads("q", black_box(&query), 100, t)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn fusion(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lists: Vec<RankedList> = (0..5)
        .map(|_| {
            RankedList::from_scores(
                "q",
                (0..100)
                    .map(|_| {
                        (
                            format!("p{}", rng.random_range(0..300)),
                            rng.random_range(0.0..30.0),
                        )
                    })
                    .collect::<std::collections::BTreeMap<_, _>>()
                    .into_iter()
                    .collect(),
            )
        })
        .collect();
    let mut group = c.benchmark_group("fuse_5x100");
    for method in [
        FusionMethod::CombMax,
        FusionMethod::CombSum,
        FusionMethod::rrf(),
    ] {
        group.bench_function(method.to_string(), |b| {
            b.iter(|| method.fuse(black_box(&lists)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bm25, mips, fusion);
criterion_main!(benches);
