//! Seeded synthetic worlds: a route of places with canonical appearance,
//! replayed as query sequences under controllable appearance drift.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{l2_norm_f32, unit_vector_f32, ImageId, LocalDescriptorSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Linear,
    Loop,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub num_places: usize,
    #[serde(default = "default_topology")]
    pub loop_topology: Topology,
    #[serde(default = "default_descriptors_per_image")]
    pub descriptors_per_image: usize,
    /// Standard deviation of the additive appearance noise applied to each
    /// descriptor component of a query frame (renormalized afterwards).
    #[serde(default)]
    pub appearance_noise: f64,
    /// Continuous appearance change: before each query sequence the
    /// canonical appearance of every place takes one Gaussian random-walk
    /// step of this magnitude (renormalized), so later sequences look less
    /// like older database entries.
    #[serde(default)]
    pub appearance_drift: f64,
    /// Where a query sequence re-enters the route, in meters from place 0.
    #[serde(default)]
    pub revisit_offset_m: f64,
    #[serde(default = "default_place_spacing")]
    pub place_spacing_m: f64,
    pub seed: u64,
    /// How many query replays of the route to synthesize.
    #[serde(default = "default_query_sequences")]
    pub query_sequences: usize,
    /// Local-descriptor dimensionality.
    #[serde(default = "default_feat_dim")]
    pub feat_dim: usize,
}

fn default_topology() -> Topology {
    Topology::Linear
}
fn default_descriptors_per_image() -> usize {
    32
}
fn default_place_spacing() -> f64 {
    10.0
}
fn default_query_sequences() -> usize {
    1
}
fn default_feat_dim() -> usize {
    16
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_places < 2 {
            return Err(Error::invalid("num_places must be at least 2"));
        }
        if self.descriptors_per_image < 1 {
            return Err(Error::invalid("descriptors_per_image must be at least 1"));
        }
        if self.appearance_noise < 0.0 {
            return Err(Error::invalid("appearance_noise must be non-negative"));
        }
        if self.appearance_drift < 0.0 {
            return Err(Error::invalid("appearance_drift must be non-negative"));
        }
        if self.place_spacing_m <= 0.0 {
            return Err(Error::invalid("place_spacing_m must be positive"));
        }
        if self.feat_dim < 2 {
            return Err(Error::invalid("feat_dim must be at least 2"));
        }
        if self.query_sequences == 0 {
            return Err(Error::invalid("query_sequences must be at least 1"));
        }
        Ok(())
    }
}

/// Metric position and world-place index for every generated frame.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    positions: BTreeMap<ImageId, f64>,
    places: BTreeMap<ImageId, u32>,
    pub num_places: usize,
    pub place_spacing_m: f64,
    pub topology: Topology,
}

impl GroundTruth {
    pub fn position(&self, id: ImageId) -> Option<f64> {
        self.positions.get(&id).copied()
    }

    pub fn place_of(&self, id: ImageId) -> Option<u32> {
        self.places.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Route distance between two world places in meters, respecting loop
    /// wrap-around.
    pub fn place_distance_m(&self, a: u32, b: u32) -> f64 {
        let diff = (a as i64 - b as i64).unsigned_abs() as usize;
        let hops = match self.topology {
            Topology::Linear => diff,
            Topology::Loop => diff.min(self.num_places - diff),
        };
        hops as f64 * self.place_spacing_m
    }

    /// Whether two world places are neighbors on the route.
    pub fn adjacent(&self, a: u32, b: u32) -> bool {
        a != b && self.place_distance_m(a, b) <= self.place_spacing_m
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    /// Database sequences (sequence id 0).
    pub database: Vec<Vec<LocalDescriptorSet>>,
    /// Query sequences (sequence ids 1..).
    pub queries: Vec<Vec<LocalDescriptorSet>>,
    pub ground_truth: GroundTruth,
}

/// Deterministically synthesizes one database traversal of the route plus
/// `query_sequences` noisy replays. With `appearance_noise == 0` the query
/// descriptors are bit-identical copies of the database descriptors for the
/// same place.
pub fn generate_synthetic_world(cfg: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feat_dim;
    let per_image = cfg.descriptors_per_image;

    // Canonical appearance of each place, evolving under drift.
    let mut canonical: Vec<Vec<f32>> = (0..cfg.num_places)
        .map(|_| {
            let mut flat = Vec::with_capacity(per_image * d);
            for _ in 0..per_image {
                flat.extend(unit_vector_f32(&mut rng, d));
            }
            flat
        })
        .collect();

    let mut positions = BTreeMap::new();
    let mut places = BTreeMap::new();

    let db_seq: Vec<LocalDescriptorSet> = (0..cfg.num_places)
        .map(|t| {
            let id = ImageId::new(0, t as u32);
            positions.insert(id, t as f64 * cfg.place_spacing_m);
            places.insert(id, t as u32);
            LocalDescriptorSet::new(id, d, canonical[t].clone())
        })
        .collect::<Result<_>>()?;

    let start = ((cfg.revisit_offset_m / cfg.place_spacing_m).round() as usize) % cfg.num_places;
    let mut queries = Vec::with_capacity(cfg.query_sequences);
    for s in 0..cfg.query_sequences {
        if cfg.appearance_drift > 0.0 {
            for flat in &mut canonical {
                *flat = perturb(flat, d, cfg.appearance_drift, &mut rng);
            }
        }
        let seq_id = (s + 1) as u32;
        let mut seq = Vec::with_capacity(cfg.num_places);
        for i in 0..cfg.num_places {
            let place = (start + i) % cfg.num_places;
            let id = ImageId::new(seq_id, i as u32);
            positions.insert(id, place as f64 * cfg.place_spacing_m);
            places.insert(id, place as u32);
            let data = if cfg.appearance_noise == 0.0 {
                canonical[place].clone()
            } else {
                perturb(&canonical[place], d, cfg.appearance_noise, &mut rng)
            };
            seq.push(LocalDescriptorSet::new(id, d, data)?);
        }
        queries.push(seq);
    }

    Ok(SyntheticWorld {
        config: cfg.clone(),
        database: vec![db_seq],
        queries,
        ground_truth: GroundTruth {
            positions,
            places,
            num_places: cfg.num_places,
            place_spacing_m: cfg.place_spacing_m,
            topology: cfg.loop_topology,
        },
    })
}

fn perturb(flat: &[f32], d: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(flat.len());
    for desc in flat.chunks_exact(d) {
        let mut v: Vec<f32> = desc
            .iter()
            .map(|&x| x + (sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        let norm = l2_norm_f32(&v);
        if norm > 1e-9 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            v.copy_from_slice(desc);
        }
        out.extend(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            num_places: 100,
            loop_topology: Topology::Linear,
            descriptors_per_image: 4,
            appearance_noise: 0.0,
            appearance_drift: 0.0,
            revisit_offset_m: 0.0,
            place_spacing_m: 10.0,
            seed: 42,
            query_sequences: 1,
            feat_dim: 8,
        }
    }

    #[test]
    fn zero_noise_queries_are_bit_identical() {
        let world = generate_synthetic_world(&base_cfg()).unwrap();
        for (db, q) in world.database[0].iter().zip(&world.queries[0]) {
            assert_eq!(db.descriptor(0), q.descriptor(0));
            assert_eq!(db.len(), q.len());
            for i in 0..db.len() {
                assert_eq!(db.descriptor(i), q.descriptor(i));
            }
        }
    }

    #[test]
    fn ground_truth_positions_are_arithmetic() {
        let world = generate_synthetic_world(&base_cfg()).unwrap();
        for t in 0..100u32 {
            let pos = world.ground_truth.position(ImageId::new(0, t)).unwrap();
            assert_eq!(pos, t as f64 * 10.0);
        }
        assert_eq!(
            world.ground_truth.position(ImageId::new(0, 99)).unwrap(),
            990.0
        );
    }

    #[test]
    fn loop_topology_wraps_adjacency() {
        let mut cfg = base_cfg();
        cfg.loop_topology = Topology::Loop;
        let world = generate_synthetic_world(&cfg).unwrap();
        assert!(world.ground_truth.adjacent(99, 0));
        assert!(!world.ground_truth.adjacent(50, 0));

        let linear = generate_synthetic_world(&base_cfg()).unwrap();
        assert!(!linear.ground_truth.adjacent(99, 0));
    }

    #[test]
    fn every_query_frame_has_ground_truth() {
        let mut cfg = base_cfg();
        cfg.query_sequences = 3;
        cfg.appearance_noise = 0.1;
        let world = generate_synthetic_world(&cfg).unwrap();
        for (s, seq) in world.queries.iter().enumerate() {
            assert_eq!(seq.len(), cfg.num_places);
            for q in seq {
                assert_eq!(q.image_id().sequence, (s + 1) as u32);
                assert!(world.ground_truth.position(q.image_id()).is_some());
            }
        }
        assert_eq!(world.ground_truth.len(), 4 * cfg.num_places);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut cfg = base_cfg();
        cfg.appearance_noise = 0.2;
        let a = generate_synthetic_world(&cfg).unwrap();
        let b = generate_synthetic_world(&cfg).unwrap();
        assert_eq!(a.queries[0][17], b.queries[0][17]);
    }

    #[test]
    fn revisit_offset_shifts_the_start_place() {
        let mut cfg = base_cfg();
        cfg.revisit_offset_m = 30.0;
        let world = generate_synthetic_world(&cfg).unwrap();
        let first = world.queries[0][0].image_id();
        assert_eq!(world.ground_truth.place_of(first), Some(3));
    }
}
