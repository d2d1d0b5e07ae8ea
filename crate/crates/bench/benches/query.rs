use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ino_core::triple_index::QuerySampler;
use ino_core::{vocab, ConjunctiveQuery};

fn queries(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let (repo, ids) = ino_bench::loaded(dir.path(), 10_000, 1);
    let mut group = c.benchmark_group("query");
    for ty in ["Agent", "Aggregation", "Metadata", "Resource"] {
        let q = ConjunctiveQuery::parse(&format!("SELECT ?x WHERE ?x <{}> <{}>", vocab::OBJECT_TYPE, vocab::type_iri(ty))).unwrap();
        group.bench_with_input(BenchmarkId::new("objectType", ty), &q, |b, q| b.iter(|| repo.query(q).unwrap()));
    }
    let g = &ids.aggregations[0];
    let q = ConjunctiveQuery::parse(&format!(
        "SELECT ?m ?r WHERE ?r <{}> <{}> ; ?r <{t}> <{}> ; ?m <{}> ?r ; ?m <{t}> <{}>",
        vocab::MEMBER_OF,
        g.as_str(),
        vocab::type_iri("Resource"),
        vocab::METADATA_FOR,
        vocab::type_iri("Metadata"),
        t = vocab::OBJECT_TYPE,
    ))
    .unwrap();
    group.bench_function("metadata_of_members", |b| b.iter(|| repo.query(&q).unwrap()));

    let triples = repo.index().triples();
    let sampler = QuerySampler::new(&triples);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sampled: Vec<ConjunctiveQuery> = (0..64)
        .filter_map(|_| {
            let size = rng.random_range(1..=3);
            sampler.sample(&mut rng, size, 0.0)
        })
        .collect();
    let mut i = 0;
    group.bench_function("sampled_1_to_3_patterns", |b| {
        b.iter(|| {
            i = (i + 1) % sampled.len();
            repo.query(&sampled[i]).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, queries);
criterion_main!(benches);
