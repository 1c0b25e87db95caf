use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dcct::clustering::{dbscan, infomap};
use dcct::encoder::{forward, loss_and_grad, EncoderDims, EncoderParams};
use dcct::metricspace::k_reciprocal_jaccard;
use dcct::{datagen, DatasetSpec, MemoryBank};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn embeddings(n_identities: usize) -> dcct::Matrix {
    let spec = DatasetSpec {
        n_identities,
        ..DatasetSpec::default()
    };
    let data = datagen::generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = EncoderParams::init(
        EncoderDims {
            d_in: spec.d_in,
            d_hidden: 64,
            d_out: 16,
        },
        &mut rng,
    );
    forward(&params, &data.inputs()).unwrap()
}

fn clustering(c: &mut Criterion) {
    let emb = embeddings(64);
    c.bench_function("jaccard_1024", |b| {
        b.iter(|| k_reciprocal_jaccard(black_box(&emb), 30, 6, 0.0).unwrap())
    });
    let dist = k_reciprocal_jaccard(&emb, 30, 6, 0.0).unwrap();
    c.bench_function("dbscan_1024", |b| b.iter(|| dbscan(black_box(&dist), 0.5, 4).unwrap()));

    let small = embeddings(16);
    let small_dist = k_reciprocal_jaccard(&small, 30, 6, 0.0).unwrap();
    c.bench_function("infomap_256", |b| b.iter(|| infomap(black_box(&small_dist), 0.5).unwrap()));
}

fn loss(c: &mut Criterion) {
    let spec = DatasetSpec::default();
    let data = datagen::generate(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = EncoderDims {
        d_in: spec.d_in,
        d_hidden: 64,
        d_out: 16,
    };
    let params = EncoderParams::init(dims, &mut rng);
    let batch: Vec<usize> = (0..32).collect();
    let inputs = data.inputs().select_rows(&batch);
    let labels: Vec<usize> = data.identity_labels()[..32].to_vec();
    let feats = forward(&params, &data.inputs()).unwrap();
    let all_labels: Vec<i32> = data.identity_labels().iter().map(|&i| i as i32).collect();
    let bank = MemoryBank::init_from_clusters(&feats, &all_labels, spec.n_identities, 0.1, true).unwrap();
    c.bench_function("loss_and_grad_32x64", |b| {
        b.iter(|| loss_and_grad(black_box(&params), &inputs, &labels, &bank, 0.05).unwrap())
    });
}

criterion_group!(benches, clustering, loss);
criterion_main!(benches);
