//! Inverted index over centroid codes.
//!
//! Each centroid is posted into one bucket per code dimension; scoring a
//! query then touches only the buckets its own symbols select, visiting
//! roughly a `1 / (2 * feat_dim)` fraction of the centroid entries instead
//! of scanning all of them.

use crate::error::{Error, Result};
use crate::polyvlad::PolyCode;

/// Frozen bucket structure over `k()` centroids. Bucket
/// `2 * feat_dim * dim + symbol` lists the centroids whose code at
/// position `dim` equals `symbol`.
#[derive(Clone, Debug)]
pub struct InvertedIndex {
    feat_dim: u16,
    code_len: usize,
    centroids: Vec<PolyCode>,
    buckets: Vec<Vec<u32>>,
    entries: usize,
}

/// Agreement counts `S(q, B_k)` in `0..=code_len`, one per centroid.
pub type ScoreVector = Vec<u32>;

/// Posts every centroid into one bucket per code dimension.
pub fn build_index(centroids: &[PolyCode]) -> Result<InvertedIndex> {
    let first = centroids
        .first()
        .ok_or_else(|| Error::invalid("cannot index an empty centroid set"))?;
    let feat_dim = first.feat_dim();
    let code_len = first.len();
    if centroids
        .iter()
        .any(|c| c.feat_dim() != feat_dim || c.len() != code_len)
    {
        return Err(Error::invalid("centroids have mixed code geometry"));
    }
    let width = 2 * feat_dim as usize;
    let mut buckets = vec![Vec::new(); width * code_len];
    for (k, c) in centroids.iter().enumerate() {
        for (dim, &symbol) in c.codes().iter().enumerate() {
            buckets[width * dim + symbol as usize].push(k as u32);
        }
    }
    Ok(InvertedIndex {
        feat_dim,
        code_len,
        entries: centroids.len() * code_len,
        centroids: centroids.to_vec(),
        buckets,
    })
}

impl InvertedIndex {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn feat_dim(&self) -> u16 {
        self.feat_dim
    }

    /// Total bucket count `W = 2 * feat_dim * code_len`.
    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, w: usize) -> &[u32] {
        &self.buckets[w]
    }

    pub fn total_entries(&self) -> usize {
        self.entries
    }

    /// The centroid codes currently indexed.
    pub fn centroids(&self) -> &[PolyCode] {
        &self.centroids
    }

    /// Logical size for memory accounting: posted entries, bucket length
    /// table and the packed centroid snapshot.
    pub fn resident_bytes(&self) -> usize {
        let snapshot: usize = self.centroids.iter().map(|c| c.record_bytes()).sum();
        self.total_entries() * 4 + self.num_buckets() * 4 + snapshot
    }

    fn check_query(&self, q: &PolyCode) -> Result<()> {
        if q.len() != self.code_len {
            return Err(Error::invalid(format!(
                "query length {} does not match index length {}",
                q.len(),
                self.code_len
            )));
        }
        if q.feat_dim() != self.feat_dim {
            return Err(Error::invalid(format!(
                "query feat_dim {} does not match index feat_dim {}",
                q.feat_dim(),
                self.feat_dim
            )));
        }
        Ok(())
    }

    /// Agreement count against every centroid, identical to a linear scan.
    pub fn score_query(&self, q: &PolyCode) -> Result<ScoreVector> {
        self.score_query_counting(q).map(|(s, _)| s)
    }

    /// Like [`InvertedIndex::score_query`] but also reports how many bucket
    /// entries were visited.
    pub fn score_query_counting(&self, q: &PolyCode) -> Result<(ScoreVector, usize)> {
        self.check_query(q)?;
        let width = 2 * self.feat_dim as usize;
        let mut scores = vec![0u32; self.k()];
        let mut visits = 0usize;
        for (dim, &symbol) in q.codes().iter().enumerate() {
            let bucket = &self.buckets[width * dim + symbol as usize];
            visits += bucket.len();
            for &k in bucket {
                scores[k as usize] += 1;
            }
        }
        Ok((scores, visits))
    }

    /// Re-posts the given centroids in place; equivalent to `build_index`
    /// over the updated centroid set.
    pub fn rebuild_on_centroid_change(&mut self, changed: &[(u32, PolyCode)]) -> Result<()> {
        for (k, new) in changed {
            let k = *k as usize;
            if k >= self.centroids.len() {
                return Err(Error::invalid(format!(
                    "unknown cluster id {k} (K = {})",
                    self.centroids.len()
                )));
            }
            if new.len() != self.code_len || new.feat_dim() != self.feat_dim {
                return Err(Error::invalid("replacement code has wrong geometry"));
            }
        }
        let width = 2 * self.feat_dim as usize;
        for (kk, new) in changed {
            let k = *kk as usize;
            let old = self.centroids[k].clone();
            for (dim, (&o, &n)) in old.codes().iter().zip(new.codes()).enumerate() {
                if o == n {
                    continue;
                }
                let out = &mut self.buckets[width * dim + o as usize];
                out.retain(|&x| x != *kk);
                let into = &mut self.buckets[width * dim + n as usize];
                let pos = into.partition_point(|&x| x < *kk);
                into.insert(pos, *kk);
            }
            self.centroids[k] = new.clone();
        }
        Ok(())
    }
}

/// Converts agreement counts to mismatch-fraction distances
/// `1 - s / code_len`.
pub fn distances_from_scores(scores: &[u32], code_len: usize) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| 1.0 - s as f64 / code_len as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyvlad::jaccard_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(codes: &[u16], d: u16) -> PolyCode {
        PolyCode::new(codes.to_vec(), d).unwrap()
    }

    fn random_codes(n: usize, len: usize, d: u16, seed: u64) -> Vec<PolyCode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<u16> = (0..len).map(|_| rng.random_range(0..2 * d)).collect();
                PolyCode::new(v, d).unwrap()
            })
            .collect()
    }

    #[test]
    fn worked_indexing_example() {
        // feat_dim 2, code_len 3: centroid [3, 0, 2] posts into buckets
        // 3 (dim 0), 4 (dim 1) and 10 (dim 2) of the 12-bucket index.
        let b1 = code(&[3, 0, 2], 2);
        let index = build_index(&[b1]).unwrap();
        assert_eq!(index.num_buckets(), 12);
        for w in 0..12 {
            let expect: &[u32] = if w == 3 || w == 4 || w == 10 {
                &[0]
            } else {
                &[]
            };
            assert_eq!(index.bucket(w), expect, "bucket {w}");
        }
    }

    #[test]
    fn single_entry_index() {
        let index = build_index(&[code(&[5], 4)]).unwrap();
        let nonempty: Vec<usize> = (0..index.num_buckets())
            .filter(|&w| !index.bucket(w).is_empty())
            .collect();
        assert_eq!(nonempty, vec![5]);
        assert_eq!(index.total_entries(), 1);
    }

    #[test]
    fn identical_centroids_share_buckets() {
        let c = code(&[1, 6, 0], 4);
        let index = build_index(&[c.clone(), c]).unwrap();
        for w in 0..index.num_buckets() {
            let b = index.bucket(w);
            assert!(b.is_empty() || b == [0, 1]);
        }
    }

    #[test]
    fn mixed_geometry_is_rejected() {
        let a = code(&[1, 2], 4);
        let b = code(&[1, 2, 3], 4);
        assert!(build_index(&[a.clone(), b]).is_err());
        let c = code(&[1, 2], 2);
        assert!(build_index(&[a, c]).is_err());
    }

    #[test]
    fn score_extremes() {
        let b = code(&[1, 2, 3, 0], 4);
        let index = build_index(std::slice::from_ref(&b)).unwrap();
        assert_eq!(index.score_query(&b).unwrap(), vec![4]);
        let far = code(&[0, 3, 2, 1], 4);
        assert_eq!(index.score_query(&far).unwrap(), vec![0]);
    }

    #[test]
    fn scores_match_linear_scan_exactly() {
        let centroids = random_codes(100, 16, 4, 12);
        let queries = random_codes(20, 16, 4, 13);
        let index = build_index(&centroids).unwrap();
        for q in &queries {
            let scores = index.score_query(q).unwrap();
            let dists = distances_from_scores(&scores, 16);
            for (k, c) in centroids.iter().enumerate() {
                let brute = q
                    .codes()
                    .iter()
                    .zip(c.codes())
                    .filter(|(a, b)| a == b)
                    .count() as u32;
                assert_eq!(scores[k], brute);
                assert_eq!(dists[k], jaccard_distance(q, c).unwrap());
            }
        }
    }

    #[test]
    fn distance_conversion_extremes() {
        assert_eq!(distances_from_scores(&[8], 8), vec![0.0]);
        assert_eq!(distances_from_scores(&[0], 8), vec![1.0]);
        assert_eq!(distances_from_scores(&[4], 8), vec![0.5]);
    }

    #[test]
    fn query_length_mismatch_is_an_error() {
        let index = build_index(&random_codes(4, 8, 4, 3)).unwrap();
        let q = code(&[1, 2], 4);
        assert!(index.score_query(&q).is_err());
    }

    #[test]
    fn rebuild_matches_fresh_build() {
        let mut centroids = random_codes(50, 12, 8, 21);
        let mut index = build_index(&centroids).unwrap();
        let replacements = random_codes(5, 12, 8, 22);
        let changed: Vec<(u32, PolyCode)> = replacements
            .into_iter()
            .enumerate()
            .map(|(i, c)| ((i * 7) as u32, c))
            .collect();
        index.rebuild_on_centroid_change(&changed).unwrap();
        for (k, c) in &changed {
            centroids[*k as usize] = c.clone();
        }
        let fresh = build_index(&centroids).unwrap();
        // recount from the buckets themselves: entries are conserved
        let recount: usize = (0..index.num_buckets())
            .map(|w| index.bucket(w).len())
            .sum();
        assert_eq!(recount, 50 * 12);
        assert_eq!(index.total_entries(), 50 * 12);
        for w in 0..fresh.num_buckets() {
            assert_eq!(index.bucket(w), fresh.bucket(w), "bucket {w} diverged");
        }
        let q = &random_codes(1, 12, 8, 23)[0];
        assert_eq!(index.score_query(q).unwrap(), fresh.score_query(q).unwrap());
    }

    #[test]
    fn rebuild_rejects_unknown_cluster() {
        let mut index = build_index(&random_codes(4, 8, 4, 3)).unwrap();
        let c = random_codes(1, 8, 4, 5).pop().unwrap();
        assert!(index.rebuild_on_centroid_change(&[(9, c)]).is_err());
    }

    #[test]
    fn visits_stay_near_the_uniform_bound() {
        // Under uniform symbols each of the code_len probed buckets holds
        // about k / (2 * feat_dim) entries.
        let k = 200;
        let len = 64;
        let centroids = random_codes(k, len, 8, 40);
        let index = build_index(&centroids).unwrap();
        let queries = random_codes(20, len, 8, 41);
        let mut total = 0usize;
        for q in &queries {
            let (_, visits) = index.score_query_counting(q).unwrap();
            total += visits;
        }
        let mean = total as f64 / queries.len() as f64;
        let uniform = (k * len) as f64 / 16.0;
        assert!(
            mean <= 2.0 * uniform,
            "mean visits {mean} vs bound {uniform}"
        );
    }
}
