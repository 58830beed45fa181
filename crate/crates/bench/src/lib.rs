//! Shared fixtures for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hm4_core::descriptors::{ImageId, LocalDescriptorSet, Vocabulary};
use hm4_core::{CodeGeometry, PolyCode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_codes(n: usize, geometry: &CodeGeometry, seed: u64) -> Vec<PolyCode> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let v: Vec<u16> = (0..geometry.code_len())
                .map(|_| rng.random_range(0..2 * geometry.feat_dim))
                .collect();
            PolyCode::new(v, geometry.feat_dim).unwrap()
        })
        .collect()
}

pub fn random_descriptor_set(count: usize, feat_dim: usize, seed: u64) -> LocalDescriptorSet {
    let mut rng = rng(seed);
    let mut flat = Vec::with_capacity(count * feat_dim);
    for _ in 0..count {
        let v: Vec<f64> = (0..feat_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        flat.extend(v.iter().map(|&x| (x / norm) as f32));
    }
    LocalDescriptorSet::new(ImageId::new(0, 0), feat_dim, flat).unwrap()
}

pub fn random_vocabulary(l: usize, feat_dim: usize, seed: u64) -> Vocabulary {
    let mut rng = rng(seed);
    let centers: Vec<f64> = (0..l * feat_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Vocabulary::from_centers(feat_dim, centers).unwrap()
}
