//! Centroid scoring: inverted index against a full linear scan.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hm4_bench::random_codes;
use hm4_core::invindex::build_index;
use hm4_core::{jaccard_distance, CodeGeometry};

fn bench_scoring(c: &mut Criterion) {
    let geometry = CodeGeometry {
        feat_dim: 128,
        vocab_size: 128,
        rotations: 8,
    };
    let mut group = c.benchmark_group("centroid_scoring");
    for &k in &[100usize, 1000, 5000] {
        let centroids = random_codes(k, &geometry, 10);
        let queries = random_codes(16, &geometry, 11);
        let index = build_index(&centroids).unwrap();

        group.bench_with_input(BenchmarkId::new("inverted_index", k), &k, |b, _| {
            let mut qi = 0;
            b.iter(|| {
                let q = &queries[qi % queries.len()];
                qi += 1;
                black_box(index.score_query(q).unwrap());
            });
        });
        group.bench_with_input(BenchmarkId::new("linear_scan", k), &k, |b, _| {
            let mut qi = 0;
            b.iter(|| {
                let q = &queries[qi % queries.len()];
                qi += 1;
                let dists: Vec<f64> = centroids
                    .iter()
                    .map(|c| jaccard_distance(q, c).unwrap())
                    .collect();
                black_box(dists);
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_scoring);
criterion_main!(benches);
