//! Local-descriptor ingestion and synthesis.
//!
//! Images enter the engine as sets of unit-norm local feature vectors,
//! either loaded from a descriptor file or synthesized from a seeded world
//! model. This module also builds the aggregation vocabulary.

mod file;
mod synthetic;

pub use file::{load_descriptor_file, write_descriptor_file, NormPolicy};
pub use synthetic::{
    generate_synthetic_world, GroundTruth, SyntheticWorld, SyntheticWorldConfig, Topology,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Loose gate on ingestion; descriptors produced by the synthesizer or a
/// renormalizing load sit within 1e-6 of unit norm.
pub const NORM_TOLERANCE: f32 = 1e-3;

/// Identifies one image: which sequence it came from and its frame index
/// within that sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImageId {
    pub sequence: u32,
    pub frame: u32,
}

impl ImageId {
    pub fn new(sequence: u32, frame: u32) -> Self {
        ImageId { sequence, frame }
    }
}

/// The unit-norm local feature vectors of one image, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptorSet {
    image_id: ImageId,
    feat_dim: usize,
    data: Vec<f32>,
}

impl LocalDescriptorSet {
    /// Validates dimensionality and that every descriptor is unit norm
    /// within [`NORM_TOLERANCE`].
    pub fn new(image_id: ImageId, feat_dim: usize, data: Vec<f32>) -> Result<Self> {
        if feat_dim == 0 {
            return Err(Error::invalid("feat_dim must be positive"));
        }
        if !data.len().is_multiple_of(feat_dim) {
            return Err(Error::invalid(format!(
                "descriptor payload of {} floats is not a multiple of feat_dim {feat_dim}",
                data.len()
            )));
        }
        for (i, d) in data.chunks_exact(feat_dim).enumerate() {
            let norm = l2_norm_f32(d);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "descriptor {i} of image {image_id:?} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(LocalDescriptorSet {
            image_id,
            feat_dim,
            data,
        })
    }

    pub fn image_id(&self) -> ImageId {
        self.image_id
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.feat_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.data[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.feat_dim)
    }
}

pub(crate) fn l2_norm_f32(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

/// Aggregation vocabulary: `len()` cluster centers in feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    feat_dim: usize,
    centers: Vec<f64>,
}

impl Vocabulary {
    pub fn from_centers(feat_dim: usize, centers: Vec<f64>) -> Result<Self> {
        if feat_dim == 0 || !centers.len().is_multiple_of(feat_dim) {
            return Err(Error::invalid("center payload does not match feat_dim"));
        }
        let v = Vocabulary { feat_dim, centers };
        if v.len() < 2 {
            return Err(Error::invalid("vocabulary needs at least 2 centers"));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.centers.len() / self.feat_dim
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn center(&self, l: usize) -> &[f64] {
        &self.centers[l * self.feat_dim..(l + 1) * self.feat_dim]
    }

    /// Index of the nearest center to `v` by Euclidean distance, smallest
    /// index on ties.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for l in 0..self.len() {
            let d = dist_sq(v, self.center(l));
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        best
    }
}

fn dist_sq(v: &[f32], c: &[f64]) -> f64 {
    v.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Lloyd iterations with greedy farthest-point seeding. Deterministic for a
/// fixed seed; the assignment objective never increases across iterations.
pub fn kmeans_vocabulary(pool: &[&[f32]], l: usize, iters: usize, seed: u64) -> Result<Vocabulary> {
    if l < 2 {
        return Err(Error::invalid("vocabulary size must be at least 2"));
    }
    if pool.len() < l {
        return Err(Error::invalid(format!(
            "pool of {} vectors cannot seed {l} centers",
            pool.len()
        )));
    }
    let dim = pool[0].len();
    if pool.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("pool vectors have mixed dimensionality"));
    }

    // Farthest-point seeding: first pick from the seed, then repeatedly the
    // point farthest from its nearest chosen center.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..pool.len());
    let mut centers: Vec<f64> = Vec::with_capacity(l * dim);
    centers.extend(pool[first].iter().map(|&x| x as f64));
    let mut min_d: Vec<f64> = pool.iter().map(|v| dist_sq(v, &centers[..dim])).collect();
    while centers.len() < l * dim {
        let (next, &d) = min_d
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .unwrap();
        if d == 0.0 {
            return Err(Error::invalid(format!(
                "pool has fewer than {l} distinct vectors"
            )));
        }
        centers.extend(pool[next].iter().map(|&x| x as f64));
        let new = &centers[centers.len() - dim..];
        for (v, m) in pool.iter().zip(&mut min_d) {
            let d = dist_sq(v, new);
            if d < *m {
                *m = d;
            }
        }
    }

    let mut vocab = Vocabulary {
        feat_dim: dim,
        centers,
    };
    let mut assign = vec![usize::MAX; pool.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (v, a) in pool.iter().zip(&mut assign) {
            let l = vocab.nearest(v);
            if l != *a {
                *a = l;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; vocab.len() * dim];
        let mut counts = vec![0usize; vocab.len()];
        for (v, &a) in pool.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(*v) {
                *s += x as f64;
            }
        }
        for (l, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue; // keep the previous center
            }
            for (dst, s) in vocab.centers[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(&sums[l * dim..(l + 1) * dim])
            {
                *dst = s / c as f64;
            }
        }
    }
    Ok(vocab)
}

/// Sum of squared distances from each pool vector to its nearest center.
pub fn kmeans_objective(pool: &[&[f32]], vocab: &Vocabulary) -> f64 {
    pool.iter()
        .map(|v| dist_sq(v, vocab.center(vocab.nearest(v))))
        .sum()
}

pub(crate) fn unit_vector_f32(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let mut out: Vec<f32> = v.iter().map(|&x| (x / norm) as f32).collect();
        let n32 = l2_norm_f32(&out);
        for x in &mut out {
            *x /= n32;
        }
        return out;
    }
}
