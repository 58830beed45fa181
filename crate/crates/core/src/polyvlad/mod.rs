//! Compact image signatures.
//!
//! Local descriptors are aggregated into per-cell residual vectors, each
//! cell is L2-normalized onto the unit sphere, and every (cell, rotation)
//! pair is quantized to the nearest vertex of the cross-polytope after a
//! random rotation. The resulting categorical vector compares under the
//! mismatch-fraction distance and clusters with K-modes.

mod code;
pub(crate) mod file;
mod kmodes;

pub use code::{jaccard_distance, matching_positions, CodeGeometry, PolyCode};
pub use file::{
    read_code_file, read_rotation_file, read_vocab_file, write_code_file, write_rotation_file,
    write_vocab_file,
};
pub use kmodes::{kmodes_centroid, kmodes_cluster, kmodes_cluster_traced, ClusterModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::descriptors::{LocalDescriptorSet, Vocabulary};
use crate::error::{Error, Result};

/// One orthogonal rotation, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation {
    dim: usize,
    m: Vec<f64>,
}

impl Rotation {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[row * self.dim + col]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        self.m
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub(crate) fn from_rows(dim: usize, m: Vec<f64>) -> Self {
        debug_assert_eq!(m.len(), dim * dim);
        Rotation { dim, m }
    }

    pub(crate) fn rows(&self) -> &[f64] {
        &self.m
    }
}

/// A seeded bank of rotations used to produce one code per (cell, rotation)
/// pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationBank {
    seed: u64,
    rotations: Vec<Rotation>,
}

impl RotationBank {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rotation(&self, m: usize) -> &Rotation {
        &self.rotations[m]
    }

    pub fn feat_dim(&self) -> usize {
        self.rotations[0].dim
    }

    pub(crate) fn from_parts(seed: u64, rotations: Vec<Rotation>) -> Self {
        RotationBank { seed, rotations }
    }
}

/// Samples `m` orthogonal matrices by orthonormalizing seeded Gaussian
/// matrices, with the determinant fixed to +1. Deterministic per seed.
pub fn sample_rotations(m: usize, feat_dim: usize, seed: u64) -> Result<RotationBank> {
    if m < 1 {
        return Err(Error::invalid("need at least one rotation"));
    }
    if feat_dim < 2 {
        return Err(Error::invalid("feat_dim must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotations = Vec::with_capacity(m);
    while rotations.len() < m {
        let cols: Vec<Vec<f64>> = (0..feat_dim)
            .map(|_| {
                (0..feat_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        if let Some(r) = orthonormalize(cols) {
            rotations.push(r);
        }
        // A numerically degenerate draw is discarded and the stream moves on.
    }
    Ok(RotationBank::from_parts(seed, rotations))
}

/// Two-pass modified Gram-Schmidt over columns; flips the last column if the
/// determinant comes out negative. Returns `None` on a degenerate draw.
fn orthonormalize(mut cols: Vec<Vec<f64>>) -> Option<Rotation> {
    let d = cols.len();
    for j in 0..d {
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let (qi, qj) = {
                    let (head, tail) = cols.split_at_mut(j);
                    (&head[i], &mut tail[0])
                };
                for (x, y) in qj.iter_mut().zip(qi) {
                    *x -= dot * y;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return None;
        }
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    if det_sign(&cols) < 0.0 {
        for x in cols[d - 1].iter_mut() {
            *x = -*x;
        }
    }
    // Columns to row-major.
    let mut m = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m[i * d + j] = x;
        }
    }
    Some(Rotation::from_rows(d, m))
}

/// Sign of the determinant via Gaussian elimination with partial pivoting.
fn det_sign(cols: &[Vec<f64>]) -> f64 {
    let d = cols.len();
    let mut a = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            a[i * d + j] = x;
        }
    }
    let mut sign = 1.0;
    for p in 0..d {
        let (pivot, _) = (p..d)
            .map(|r| (r, a[r * d + p].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if a[pivot * d + p] == 0.0 {
            return 0.0;
        }
        if pivot != p {
            for c in 0..d {
                a.swap(p * d + c, pivot * d + c);
            }
            sign = -sign;
        }
        if a[p * d + p] < 0.0 {
            sign = -sign;
        }
        for r in p + 1..d {
            let f = a[r * d + p] / a[p * d + p];
            for c in p..d {
                a[r * d + c] -= f * a[p * d + c];
            }
        }
    }
    sign
}

/// Aggregates a descriptor set into one residual vector per vocabulary
/// cell. Non-empty cells are L2-normalized; cells with no assigned
/// descriptors (or an exactly zero residual sum) stay at the zero vector.
pub fn vlad_aggregate(set: &LocalDescriptorSet, vocab: &Vocabulary) -> Result<Vec<Vec<f64>>> {
    if set.is_empty() {
        return Err(Error::invalid(format!(
            "image {:?} has no descriptors",
            set.image_id()
        )));
    }
    if set.feat_dim() != vocab.feat_dim() {
        return Err(Error::invalid(format!(
            "descriptor dim {} does not match vocabulary dim {}",
            set.feat_dim(),
            vocab.feat_dim()
        )));
    }
    let d = vocab.feat_dim();
    let mut cells = vec![vec![0.0f64; d]; vocab.len()];
    for desc in set.iter() {
        let l = vocab.nearest(desc);
        let center = vocab.center(l);
        for ((acc, &x), &c) in cells[l].iter_mut().zip(desc).zip(center) {
            *acc += x as f64 - c;
        }
    }
    for cell in &mut cells {
        let norm: f64 = cell.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in cell.iter_mut() {
                *x /= norm;
            }
        }
    }
    Ok(cells)
}

/// Index of the cross-polytope vertex nearest to the rotated vector: with
/// `y = R x` and `m*` the position of the largest `|y[m]|` (smallest index
/// on ties), the code is `m*` when `y[m*] >= 0` and `m* + dim` otherwise.
/// Total on the zero vector, which encodes to 0.
pub fn polytope_encode(x: &[f64], rotation: &Rotation) -> u16 {
    let y = rotation.apply(x);
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (m, &v) in y.iter().enumerate() {
        let a = v.abs();
        if a > best_abs {
            best_abs = a;
            best = m;
        }
    }
    if y[best] >= 0.0 {
        best as u16
    } else {
        (best + rotation.dim()) as u16
    }
}

/// Encodes one image: VLAD cells, then one polytope code per (rotation,
/// cell) pair, laid out rotation-major (`position = m * L + l`).
pub fn encode_image(
    set: &LocalDescriptorSet,
    vocab: &Vocabulary,
    bank: &RotationBank,
) -> Result<PolyCode> {
    if bank.feat_dim() != vocab.feat_dim() {
        return Err(Error::invalid(format!(
            "rotation dim {} does not match vocabulary dim {}",
            bank.feat_dim(),
            vocab.feat_dim()
        )));
    }
    let cells = vlad_aggregate(set, vocab)?;
    let mut codes = Vec::with_capacity(bank.len() * cells.len());
    for m in 0..bank.len() {
        let rot = bank.rotation(m);
        for cell in &cells {
            codes.push(polytope_encode(cell, rot));
        }
    }
    PolyCode::new(codes, vocab.feat_dim() as u16)
}
