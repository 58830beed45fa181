//! K-modes clustering of code vectors under the mismatch-fraction distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::code::{jaccard_distance, PolyCode};
use crate::error::{Error, Result};

/// Disjoint clusters over a code database plus one centroid per cluster.
#[derive(Clone, Debug)]
pub struct ClusterModel {
    assignments: Vec<u32>,
    centroids: Vec<PolyCode>,
}

impl ClusterModel {
    pub fn from_parts(assignments: Vec<u32>, centroids: Vec<PolyCode>) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(Error::invalid("cluster model needs at least one centroid"));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a as usize >= k) {
            return Err(Error::invalid(format!(
                "assignment to cluster {bad} out of range (K = {k})"
            )));
        }
        Ok(ClusterModel {
            assignments,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Number of assigned images.
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn cluster_of(&self, image: usize) -> u32 {
        self.assignments[image]
    }

    pub fn centroids(&self) -> &[PolyCode] {
        &self.centroids
    }

    pub fn centroid(&self, k: usize) -> &PolyCode {
        &self.centroids[k]
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a as usize == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Appends a newly stored image to an existing cluster.
    pub fn push_assignment(&mut self, cluster: u32) -> Result<()> {
        if cluster as usize >= self.k() {
            return Err(Error::invalid(format!(
                "cluster {cluster} out of range (K = {})",
                self.k()
            )));
        }
        self.assignments.push(cluster);
        Ok(())
    }

    pub fn set_centroid(&mut self, k: usize, centroid: PolyCode) -> Result<()> {
        if k >= self.k() {
            return Err(Error::invalid(format!("cluster {k} out of range")));
        }
        self.centroids[k] = centroid;
        Ok(())
    }

    /// Mean distance of each image to its cluster centroid.
    pub fn objective(&self, codes: &[PolyCode]) -> Result<f64> {
        let mut sum = 0.0;
        for (i, &a) in self.assignments.iter().enumerate() {
            sum += jaccard_distance(&codes[i], &self.centroids[a as usize])?;
        }
        Ok(sum / self.assignments.len().max(1) as f64)
    }
}

/// Per-dimension mode of the member codes; ties break toward the smallest
/// code value.
pub fn kmodes_centroid(members: &[&PolyCode]) -> Result<PolyCode> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("centroid of an empty member list"))?;
    let d = first.feat_dim();
    let len = first.len();
    if members.iter().any(|m| m.len() != len || m.feat_dim() != d) {
        return Err(Error::invalid("member codes have mixed geometry"));
    }
    let symbols = 2 * d as usize;
    let mut counts = vec![0u32; symbols];
    let mut out = Vec::with_capacity(len);
    for pos in 0..len {
        counts.iter_mut().for_each(|c| *c = 0);
        for m in members {
            counts[m.codes()[pos] as usize] += 1;
        }
        let mut best = 0usize;
        for (s, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = s;
            }
        }
        out.push(best as u16);
    }
    PolyCode::new(out, d)
}

fn centroid_of(codes: &[PolyCode], members: &[usize]) -> Result<PolyCode> {
    let refs: Vec<&PolyCode> = members.iter().map(|&i| &codes[i]).collect();
    kmodes_centroid(&refs)
}

/// K-modes under the mismatch-fraction distance. Returns the model and the
/// per-iteration objective trace (non-increasing).
pub fn kmodes_cluster_traced(
    codes: &[PolyCode],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(ClusterModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if codes.len() < k {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {} codes",
            codes.len()
        )));
    }
    let n = codes.len();

    // Greedy farthest-point seeding over the code distance, preferring K
    // distinct codes; falls back to duplicates only when the input has
    // fewer distinct codes than K.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centroids: Vec<PolyCode> = vec![codes[first].clone()];
    let mut min_d: Vec<f64> = codes
        .iter()
        .map(|c| jaccard_distance(c, &centroids[0]).unwrap())
        .collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while centroids.len() < k {
        let mut best: Option<usize> = None;
        for (i, (&d, &t)) in min_d.iter().zip(&taken).enumerate() {
            if t {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if d > min_d[b] => best = Some(i),
                _ => {}
            }
        }
        let pick = best.expect("codes.len() >= k leaves an unchosen code");
        taken[pick] = true;
        let c = codes[pick].clone();
        for (cd, m) in codes.iter().zip(&mut min_d) {
            let d = jaccard_distance(cd, &c).unwrap();
            if d < *m {
                *m = d;
            }
        }
        centroids.push(c);
    }

    let mut assignments = vec![0u32; n];
    let mut trace = Vec::new();
    for _ in 0..iters.max(1) {
        // Assignment: nearest centroid, smallest cluster id on ties.
        let mut changed = false;
        for (i, code) in codes.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (kk, c) in centroids.iter().enumerate() {
                let d = jaccard_distance(code, c)?;
                if d < best_d {
                    best_d = d;
                    best = kk;
                }
            }
            if assignments[i] != best as u32 {
                assignments[i] = best as u32;
                changed = true;
            }
        }

        // Repair: refill each emptied cluster with the point farthest from
        // its current centroid, drawn from a cluster that can spare it.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a as usize] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut donor: Option<(usize, f64)> = None;
            for (i, &a) in assignments.iter().enumerate() {
                if sizes[a as usize] < 2 {
                    continue;
                }
                let d = jaccard_distance(&codes[i], &centroids[a as usize])?;
                if donor.is_none_or(|(_, dd)| d > dd) {
                    donor = Some((i, d));
                }
            }
            if let Some((i, _)) = donor {
                sizes[assignments[i] as usize] -= 1;
                assignments[i] = empty as u32;
                sizes[empty] += 1;
                changed = true;
            }
        }

        // Update step: per-dimension modes.
        for (kk, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == kk as u32).collect();
            if !members.is_empty() {
                *centroid = centroid_of(codes, &members)?;
            }
        }

        let model = ClusterModel {
            assignments: assignments.clone(),
            centroids: centroids.clone(),
        };
        trace.push(model.objective(codes)?);
        if !changed {
            break;
        }
    }

    Ok((
        ClusterModel {
            assignments,
            centroids,
        },
        trace,
    ))
}

pub fn kmodes_cluster(
    codes: &[PolyCode],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<ClusterModel> {
    kmodes_cluster_traced(codes, k, iters, seed).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

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
    fn centroid_of_singleton_is_the_member() {
        let a = code(&[3, 1, 0], 2);
        assert_eq!(kmodes_centroid(&[&a]).unwrap(), a);
    }

    #[test]
    fn centroid_is_per_dimension_majority() {
        let ms = [code(&[0, 1], 2), code(&[0, 1], 2), code(&[2, 1], 2)];
        let refs: Vec<&PolyCode> = ms.iter().collect();
        assert_eq!(kmodes_centroid(&refs).unwrap(), code(&[0, 1], 2));
    }

    #[test]
    fn centroid_ties_break_to_smallest_value() {
        let ms = [code(&[0, 3], 2), code(&[1, 3], 2)];
        let refs: Vec<&PolyCode> = ms.iter().collect();
        assert_eq!(kmodes_centroid(&refs).unwrap(), code(&[0, 3], 2));
    }

    #[test]
    fn centroid_of_empty_list_is_an_error() {
        assert!(kmodes_centroid(&[]).is_err());
    }

    /// Brute force over every possible code vector at tiny geometry: the
    /// per-dimension mode must attain the minimum total distance.
    #[test]
    fn centroid_attains_brute_force_minimum() {
        let members = [
            code(&[0, 1, 3], 2),
            code(&[0, 2, 3], 2),
            code(&[1, 1, 3], 2),
            code(&[0, 1, 2], 2),
            code(&[3, 1, 3], 2),
        ];
        let refs: Vec<&PolyCode> = members.iter().collect();
        let centroid = kmodes_centroid(&refs).unwrap();
        let cost = |b: &PolyCode| -> f64 {
            members
                .iter()
                .map(|m| jaccard_distance(m, b).unwrap())
                .sum()
        };
        let centroid_cost = cost(&centroid);
        for c0 in 0..4u16 {
            for c1 in 0..4u16 {
                for c2 in 0..4u16 {
                    let b = code(&[c0, c1, c2], 2);
                    assert!(
                        centroid_cost <= cost(&b) + 1e-12,
                        "candidate {b:?} beats the mode centroid"
                    );
                }
            }
        }
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let codes = random_codes(8, 6, 4, 1);
        let (model, trace) = kmodes_cluster_traced(&codes, 8, 10, 2).unwrap();
        assert_eq!(*trace.last().unwrap(), 0.0);
        assert_eq!(model.objective(&codes).unwrap(), 0.0);
        // every code is its own centroid
        for (i, &a) in model.assignments().iter().enumerate() {
            assert_eq!(model.centroid(a as usize), &codes[i]);
        }
    }

    #[test]
    fn two_identical_groups_are_exactly_recovered() {
        let a = code(&[1, 2, 3, 0], 4);
        let b = code(&[7, 6, 5, 4], 4);
        let codes = vec![a.clone(), b.clone(), a.clone(), b.clone(), a.clone()];
        let model = kmodes_cluster(&codes, 2, 10, 5).unwrap();
        assert_eq!(model.objective(&codes).unwrap(), 0.0);
        let mut got: Vec<&PolyCode> = model.centroids().iter().collect();
        got.sort_by_key(|c| c.codes()[0]);
        assert_eq!(got, vec![&a, &b]);
    }

    #[test]
    fn objective_trace_is_monotone_non_increasing() {
        let codes = random_codes(20, 8, 4, 33);
        let (model, trace) = kmodes_cluster_traced(&codes, 3, 15, 7).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose: {trace:?}");
        }
        // final objective no worse than a fixed arbitrary assignment
        let arbitrary = ClusterModel::from_parts(
            (0..20).map(|i| (i % 3) as u32).collect(),
            model.centroids().to_vec(),
        )
        .unwrap();
        assert!(model.objective(&codes).unwrap() <= arbitrary.objective(&codes).unwrap() + 1e-12);
    }

    #[test]
    fn clustering_is_deterministic_per_seed() {
        let codes = random_codes(30, 10, 8, 4);
        let a = kmodes_cluster(&codes, 4, 12, 9).unwrap();
        let b = kmodes_cluster(&codes, 4, 12, 9).unwrap();
        assert_eq!(a.assignments(), b.assignments());
        assert_eq!(a.centroids(), b.centroids());
    }

    #[test]
    fn too_few_codes_is_an_error() {
        let codes = random_codes(3, 4, 2, 0);
        assert!(kmodes_cluster(&codes, 4, 5, 0).is_err());
    }

    #[test]
    fn clusters_cover_all_codes() {
        let codes = random_codes(25, 6, 4, 10);
        let model = kmodes_cluster(&codes, 5, 10, 3).unwrap();
        let total: usize = (0..5).map(|k| model.members(k).len()).sum();
        assert_eq!(total, 25);
        for k in 0..5 {
            assert!(!model.members(k).is_empty(), "cluster {k} is empty");
        }
    }
}
