//! Shared fixtures for integration tests.
#![allow(dead_code)] // each test target uses a different subset

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hm4_core::graph::{build_submap, init_sequence_transitions, TransitionMatrix};
use hm4_core::polyvlad::ClusterModel;
use hm4_core::store::{ActiveMemory, CoarseModel, PassiveStore, TieredState};
use hm4_core::{CodeGeometry, PolyCode};

pub fn random_codes(n: usize, geometry: &CodeGeometry, seed: u64) -> Vec<PolyCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<u16> = (0..geometry.code_len())
                .map(|_| rng.random_range(0..2 * geometry.feat_dim))
                .collect();
            PolyCode::new(v, geometry.feat_dim).unwrap()
        })
        .collect()
}

/// A copy of `base` with each symbol independently resampled with
/// probability `flip`.
pub fn noisy_code(base: &PolyCode, flip: f64, rng: &mut ChaCha8Rng) -> PolyCode {
    let d = base.feat_dim();
    let v: Vec<u16> = base
        .codes()
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < flip {
                rng.random_range(0..2 * d)
            } else {
                c
            }
        })
        .collect();
    PolyCode::new(v, d).unwrap()
}

/// A map of `sequences` appended chains of `frames` places each, with a few
/// deterministic cross-sequence match edges.
pub fn multi_sequence_map(sequences: usize, frames: usize, seed: u64) -> TransitionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = init_sequence_transitions(frames, 5, 3.0);
    for _ in 1..sequences {
        let prev_n = e.n();
        e.append_sequence(init_sequence_transitions(frames, 5, 3.0));
        let mut matches = Vec::new();
        for t in 0..frames {
            if rng.random::<f64>() < 0.3 {
                matches.push((t, rng.random_range(0..prev_n)));
            }
        }
        e.link_matches(prev_n, &matches).unwrap();
    }
    e
}

/// Singleton clustering: every place is its own cluster with its own code
/// as centroid, which makes the coarse model exact.
pub fn singleton_coarse(codes: &[PolyCode], e: &TransitionMatrix) -> CoarseModel {
    let clusters =
        ClusterModel::from_parts((0..codes.len() as u32).collect(), codes.to_vec()).unwrap();
    let submap = build_submap(e, &clusters).unwrap();
    CoarseModel::new(clusters, submap).unwrap()
}

/// Builds an on-disk store around the given codes/map/coarse model and
/// returns the ready inference state.
pub fn tiered_state(
    dir: &std::path::Path,
    geometry: CodeGeometry,
    codes: &[PolyCode],
    map: TransitionMatrix,
    coarse: CoarseModel,
) -> TieredState {
    let mut ps = PassiveStore::create(dir, geometry).unwrap();
    ps.put_sequence(codes).unwrap();
    *ps.map_mut() = map;
    ps.save_map().unwrap();
    ps.save_coarse(&coarse).unwrap();
    let am = ActiveMemory::new(geometry, coarse).unwrap();
    TieredState::new(ps, am)
}
