//! Image encoding throughput: VLAD aggregation plus polytope quantization.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use hm4_bench::{random_descriptor_set, random_vocabulary};
use hm4_core::polyvlad::{encode_image, sample_rotations};

fn bench_encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("encode_image");
    for &(feat_dim, vocab, descriptors) in
        &[(16usize, 32usize, 64usize), (32, 128, 256), (128, 128, 256)]
    {
        let set = random_descriptor_set(descriptors, feat_dim, 1);
        let vocabulary = random_vocabulary(vocab, feat_dim, 2);
        let bank = sample_rotations(8, feat_dim, 3).unwrap();
        group.throughput(Throughput::Elements(descriptors as u64));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("d{feat_dim}_L{vocab}_n{descriptors}")),
            &(),
            |b, _| {
                b.iter(|| encode_image(black_box(&set), &vocabulary, &bank).unwrap());
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_encode);
criterion_main!(benches);
