//! Recursive place-recognition filters.
//!
//! [`baseline_filter_step`] is the exact filter over the full database.
//! [`hm4_step`] is the two-tiered variant: it evaluates the observation and
//! transition models exactly on a small promising set fetched from passive
//! storage, and approximately everywhere else through the cluster centroids
//! and the support-place submap held in active memory.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::TransitionMatrix;
use crate::polyvlad::{jaccard_distance, PolyCode};
use crate::store::{LogEntry, TieredState};

/// Posterior distribution over all stored places.
///
/// A belief produced by one of the step functions additionally carries the
/// indices that cleared the promising threshold, collected during
/// normalization; [`promising_set`] then avoids rescanning the whole
/// vector. Externally constructed beliefs simply fall back to the scan.
#[derive(Clone, Debug)]
pub struct Belief {
    p: Vec<f64>,
    seeds: Option<ThresholdSeeds>,
}

#[derive(Clone, Debug)]
struct ThresholdSeeds {
    zeta: f64,
    ids: Vec<u32>,
}

impl PartialEq for Belief {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p
    }
}

impl Belief {
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "belief over zero places");
        Belief {
            p: vec![1.0 / n as f64; n],
            seeds: None,
        }
    }

    /// Normalizes a nonnegative confidence vector. An all-zero vector means
    /// no place is plausible.
    pub fn from_unnormalized(mut v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::invalid("confidence values must be finite and >= 0"));
        }
        let sum: f64 = v.iter().sum();
        if sum <= 0.0 {
            return Err(Error::LostState);
        }
        for x in &mut v {
            *x /= sum;
        }
        Ok(Belief { p: v, seeds: None })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    fn threshold_seeds(&self, zeta: f64) -> Option<&[u32]> {
        self.seeds
            .as_ref()
            .filter(|s| s.zeta == zeta)
            .map(|s| s.ids.as_slice())
    }
}

/// Normalizes in place while collecting the argmax and the indices holding
/// mass at least `zeta`.
fn finalize_belief(mut conf: Vec<f64>, sum: f64, zeta: f64) -> (Belief, usize) {
    debug_assert!(sum > 0.0 && sum.is_finite());
    let inv = 1.0 / sum;
    let mut ids = Vec::new();
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, x) in conf.iter_mut().enumerate() {
        *x *= inv;
        if *x > best_v {
            best_v = *x;
            best = i;
        }
        if *x >= zeta {
            ids.push(i as u32);
        }
    }
    (
        Belief {
            p: conf,
            seeds: Some(ThresholdSeeds { zeta, ids }),
        },
        best,
    )
}

/// Observation-model parameters: likelihood bandwidth, promising threshold
/// and the cap on how many promising places are fetched per step.
#[derive(Clone, Copy, Debug)]
pub struct ObservationParams {
    pub sigma: f64,
    pub zeta: f64,
    pub cap: usize,
}

impl Default for ObservationParams {
    fn default() -> Self {
        ObservationParams {
            sigma: 0.03,
            zeta: 0.00015,
            cap: 100,
        }
    }
}

impl ObservationParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::invalid("zeta must lie in [0, 1]"));
        }
        if self.cap == 0 {
            return Err(Error::invalid("promising cap must be at least 1"));
        }
        Ok(())
    }
}

/// `exp(-dist / sigma)`.
pub fn observation_likelihood(dist: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if dist < 0.0 {
        return Err(Error::invalid("distance must be non-negative"));
    }
    Ok((-dist / sigma).exp())
}

/// One exact filter update over the full database:
/// posterior proportional to `obs .* (E^T prev)`.
pub fn baseline_filter_step(e: &TransitionMatrix, obs: &[f64], prev: &Belief) -> Result<Belief> {
    let n = e.n();
    if prev.len() != n || obs.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: map {n}, belief {}, observation {}",
            prev.len(),
            obs.len()
        )));
    }
    let mut propagated = vec![0.0f64; n];
    for (i, row) in e.rows() {
        let pi = prev.get(i);
        if pi == 0.0 {
            continue;
        }
        for &(j, p) in row {
            propagated[j as usize] += p * pi;
        }
    }
    for (x, &o) in propagated.iter_mut().zip(obs) {
        *x *= o;
    }
    Belief::from_unnormalized(propagated)
}

/// The places worth fetching this step: those holding prior mass at least
/// `zeta`, plus their topological successors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromisingSet {
    ids: Vec<u32>,
}

impl PromisingSet {
    pub fn empty() -> Self {
        PromisingSet::default()
    }

    pub fn from_ids(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        PromisingSet { ids }
    }

    /// Ascending, duplicate-free place ids.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// Thresholds the previous posterior, expands along outgoing map edges, and
/// finally trims to `cap` by prior mass (smaller index wins ties). When no
/// place clears the threshold, the posterior argmax seeds the set alone.
pub fn promising_set(
    prev: &Belief,
    e: &TransitionMatrix,
    params: &ObservationParams,
) -> PromisingSet {
    let n = e.n();
    debug_assert_eq!(prev.len(), n);
    let mut thresholded: Vec<u32> = match prev.threshold_seeds(params.zeta) {
        Some(seeds) => seeds.to_vec(),
        None => (0..n as u32)
            .filter(|&i| prev.get(i as usize) >= params.zeta)
            .collect(),
    };
    if thresholded.is_empty() {
        thresholded.push(map_decision(prev) as u32);
    }
    let expansion: usize = thresholded.iter().map(|&i| e.out_degree(i as usize)).sum();
    let mut ids = Vec::with_capacity(thresholded.len() + expansion);
    for &i in &thresholded {
        ids.push(i);
        for &(j, _) in e.row(i as usize) {
            ids.push(j);
        }
    }
    ids.sort_unstable();
    ids.dedup();
    if ids.len() > params.cap {
        ids.sort_by(|&a, &b| {
            prev.get(b as usize)
                .partial_cmp(&prev.get(a as usize))
                .unwrap()
                .then(a.cmp(&b))
        });
        ids.truncate(params.cap);
        ids.sort_unstable();
    }
    PromisingSet { ids }
}

/// The map columns at the promising places, gathered sparsely.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActiveTransition {
    columns: Vec<Vec<(u32, f64)>>,
}

impl ActiveTransition {
    pub fn empty() -> Self {
        ActiveTransition::default()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, m: usize) -> &[(u32, f64)] {
        &self.columns[m]
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.len()).sum()
    }

    /// Logical transfer/resident size.
    pub fn resident_bytes(&self) -> usize {
        self.nnz() * 12 + self.len() * 8
    }
}

/// Gathers `E(:, p)` for every promising place `p`.
pub fn active_transition(e: &TransitionMatrix, promising: &PromisingSet) -> ActiveTransition {
    ActiveTransition {
        columns: promising
            .ids()
            .iter()
            .map(|&p| e.column(p as usize))
            .collect(),
    }
}

/// Maximum a posteriori decision; ties break toward the smallest index.
pub fn map_decision(p: &Belief) -> usize {
    let mut best = 0;
    for (i, &v) in p.as_slice().iter().enumerate() {
        if v > p.get(best) {
            best = i;
        }
    }
    best
}

/// Outcome of one inference step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub belief: Belief,
    pub decision: usize,
    pub promising: PromisingSet,
    /// The combined confidence vanished and the posterior was re-seeded
    /// from the background observation alone.
    pub lost_state: bool,
}

fn sparse_dot(column: &[(u32, f64)], prev: &Belief) -> f64 {
    column
        .iter()
        .map(|&(row, p)| p * prev.get(row as usize))
        .sum()
}

/// Background log-likelihoods per cluster, scored through the inverted
/// index.
fn background_log_likelihoods(state: &TieredState, q: &PolyCode, sigma: f64) -> Result<Vec<f64>> {
    let index = state.am.index();
    let scores = index.score_query(q)?;
    let len = index.code_len() as f64;
    Ok(scores
        .iter()
        .map(|&s| -(1.0 - s as f64 / len) / sigma)
        .collect())
}

/// Posterior from the background observation alone, cluster-expanded. Used
/// for the first frame of a sequence and for lost-state recovery.
fn background_only_belief(state: &TieredState, log_bg: &[f64], zeta: f64) -> Result<Belief> {
    let assignments = state.am.clusters().assignments();
    let shift = log_bg.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !shift.is_finite() {
        // Every cluster likelihood underflowed; the honest recovery is the
        // flat distribution.
        return Ok(Belief::uniform(assignments.len()));
    }
    let bg: Vec<f64> = log_bg.iter().map(|&l| (l - shift).exp()).collect();
    let mut conf = Vec::with_capacity(assignments.len());
    let mut sum = 0.0;
    for &k in assignments {
        let v = bg[k as usize];
        conf.push(v);
        sum += v;
    }
    if sum <= 0.0 {
        return Err(Error::LostState);
    }
    Ok(finalize_belief(conf, sum, zeta).0)
}

/// One two-tiered inference step: seek promising places from the previous
/// posterior, sync their codes into active memory, evaluate the exact model
/// there and the coarse model everywhere else, then normalize and decide.
///
/// Likelihoods are handled in log space and exponentiated after a max
/// shift; the shift cancels in the normalization.
pub fn hm4_step(
    prev: &Belief,
    q: &PolyCode,
    state: &mut TieredState,
    params: &ObservationParams,
) -> Result<StepResult> {
    params.validate()?;
    let start = Instant::now();
    let n = state.ps.map().n();
    if prev.len() != n {
        return Err(Error::invalid(format!(
            "belief covers {} places but the map has {n}",
            prev.len()
        )));
    }
    if state.am.clusters().assignments().len() != n {
        return Err(Error::invalid(
            "active memory coarse model is stale relative to the map",
        ));
    }

    let promising = promising_set(prev, state.ps.map(), params);
    let sync = state.am.sync(&promising, &state.ps)?;
    let eac = active_transition(state.ps.map(), &promising);
    let eac_bytes = eac.resident_bytes();

    let mut log_ac = Vec::with_capacity(promising.len());
    for &id in promising.ids() {
        let code = state
            .am
            .resident(id)
            .ok_or_else(|| Error::invalid(format!("place {id} missing after sync")))?;
        log_ac.push(-jaccard_distance(q, code)? / params.sigma);
    }
    let log_bg = background_log_likelihoods(state, q, params.sigma)?;
    let shift = log_ac
        .iter()
        .chain(&log_bg)
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));

    let mut sum = 0.0f64;
    let mut conf = Vec::new();
    if shift.is_finite() {
        let submap = state.am.submap();
        // per-cluster background confidence, expanded to places by
        // assignment while accumulating the normalizer
        let bg_conf: Vec<f64> = (0..submap.k())
            .map(|k| (log_bg[k] - shift).exp() * sparse_dot(submap.column(k), prev))
            .collect();
        let assignments = state.am.clusters().assignments();
        conf = assignments.iter().map(|&k| bg_conf[k as usize]).collect();
        sum = conf.iter().sum();
        // the promising places are scored exactly and override their
        // background estimate
        for (m, &id) in promising.ids().iter().enumerate() {
            let v = (log_ac[m] - shift).exp() * sparse_dot(eac.column(m), prev);
            let slot = &mut conf[id as usize];
            sum += v - *slot;
            *slot = v;
        }
    }

    state.am.set_active_transition(eac);

    let (belief, decision, lost_state) = if sum > 0.0 && sum.is_finite() {
        let (belief, decision) = finalize_belief(conf, sum, params.zeta);
        (belief, decision, false)
    } else {
        let belief = background_only_belief(state, &log_bg, params.zeta)?;
        let decision = map_decision(&belief);
        (belief, decision, true)
    };

    state.log.push(LogEntry {
        step: state.log.len() as u64,
        promising: promising.len(),
        fetched: sync.fetched,
        evicted: sync.evicted,
        code_bytes: sync.bytes,
        eac_bytes,
        am_bytes: state.am.resident_bytes(),
        step_micros: start.elapsed().as_micros() as u64,
    });

    Ok(StepResult {
        belief,
        decision,
        promising,
        lost_state,
    })
}

/// First frame of a sequence: the prior is uniform, so only the background
/// observation shapes the posterior. Active memory is synced to an empty
/// promising set.
pub fn first_frame_step(
    q: &PolyCode,
    state: &mut TieredState,
    params: &ObservationParams,
) -> Result<StepResult> {
    params.validate()?;
    let start = Instant::now();
    let sync = state.am.sync(&PromisingSet::empty(), &state.ps)?;
    state.am.set_active_transition(ActiveTransition::empty());
    let log_bg = background_log_likelihoods(state, q, params.sigma)?;
    let belief = background_only_belief(state, &log_bg, params.zeta)?;
    let decision = map_decision(&belief);
    state.log.push(LogEntry {
        step: state.log.len() as u64,
        promising: 0,
        fetched: sync.fetched,
        evicted: sync.evicted,
        code_bytes: sync.bytes,
        eac_bytes: 0,
        am_bytes: state.am.resident_bytes(),
        step_micros: start.elapsed().as_micros() as u64,
    });
    Ok(StepResult {
        belief,
        decision,
        promising: PromisingSet::empty(),
        lost_state: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::init_sequence_transitions;

    #[test]
    fn likelihood_values() {
        assert_eq!(observation_likelihood(0.0, 0.5).unwrap(), 1.0);
        let e1 = observation_likelihood(0.5, 0.5).unwrap();
        assert!((e1 - (-1.0f64).exp()).abs() < 1e-15);
        // at the default bandwidth, a full mismatch is vanishingly unlikely
        let tiny = observation_likelihood(1.0, 0.03).unwrap();
        assert!((tiny - (-1.0 / 0.03f64).exp()).abs() < 1e-20);
        assert!((tiny / 3.3e-15 - 1.0).abs() < 0.05);
    }

    #[test]
    fn likelihood_rejects_bad_arguments() {
        assert!(observation_likelihood(0.1, 0.0).is_err());
        assert!(observation_likelihood(0.1, -1.0).is_err());
        assert!(observation_likelihood(-0.1, 1.0).is_err());
    }

    #[test]
    fn observation_dominates_uniform_transitions() {
        let e =
            TransitionMatrix::from_rows(vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]])
                .unwrap();
        let prev = Belief::uniform(2);
        let p = baseline_filter_step(&e, &[1.0, 0.0], &prev).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn identity_chain_with_flat_observation_is_stationary() {
        let e = TransitionMatrix::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let prev = Belief::from_unnormalized(vec![0.3, 0.7]).unwrap();
        let p = baseline_filter_step(&e, &[0.5, 0.5], &prev).unwrap();
        for (a, b) in p.as_slice().iter().zip(prev.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn three_place_chain_matches_hand_computation() {
        // row sums 1; E^T p = (0.30, 0.35, 0.35); o .* = (.06, .175, .105);
        // normalized by 0.34.
        let e = TransitionMatrix::from_rows(vec![
            vec![(0, 0.6), (1, 0.4)],
            vec![(1, 0.5), (2, 0.5)],
            vec![(2, 1.0)],
        ])
        .unwrap();
        let prev = Belief::from_unnormalized(vec![0.5, 0.3, 0.2]).unwrap();
        let p = baseline_filter_step(&e, &[0.2, 0.5, 0.3], &prev).unwrap();
        let expect = [3.0 / 17.0, 35.0 / 68.0, 21.0 / 68.0];
        for (a, b) in p.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{:?} vs {expect:?}", p.as_slice());
        }
    }

    #[test]
    fn vanished_posterior_is_a_lost_state() {
        let e = TransitionMatrix::from_rows(vec![vec![(1, 1.0)], vec![(1, 1.0)]]).unwrap();
        let prev = Belief::from_unnormalized(vec![1.0, 0.0]).unwrap();
        match baseline_filter_step(&e, &[1.0, 0.0], &prev) {
            Err(Error::LostState) => {}
            other => panic!("expected lost state, got {other:?}"),
        }
    }

    #[test]
    fn zero_threshold_keeps_every_place() {
        let e = init_sequence_transitions(20, 3, 3.0);
        let prev = Belief::uniform(20);
        let params = ObservationParams {
            zeta: 0.0,
            cap: 100,
            ..Default::default()
        };
        let pt = promising_set(&prev, &e, &params);
        assert_eq!(pt.len(), 20);
    }

    #[test]
    fn chain_example_expands_successors() {
        let e = TransitionMatrix::from_rows(vec![
            vec![(0, 0.5), (1, 0.5)],
            vec![(1, 0.5), (2, 0.5)],
            vec![(2, 1.0)],
        ])
        .unwrap();
        let prev = Belief::from_unnormalized(vec![0.9, 1e-6, 0.0999]).unwrap();
        let params = ObservationParams {
            zeta: 0.00015,
            cap: 100,
            ..Default::default()
        };
        // thresholded: places 0 and 2; successors add place 1
        let pt = promising_set(&prev, &e, &params);
        assert_eq!(pt.ids(), &[0, 1, 2]);
    }

    #[test]
    fn cap_keeps_largest_prior_mass() {
        let e = init_sequence_transitions(6, 0, 3.0); // self loops only
        let prev = Belief::from_unnormalized(vec![0.05, 0.3, 0.1, 0.25, 0.2, 0.1]).unwrap();
        let params = ObservationParams {
            zeta: 0.0,
            cap: 3,
            ..Default::default()
        };
        let pt = promising_set(&prev, &e, &params);
        assert_eq!(pt.ids(), &[1, 3, 4]);
    }

    #[test]
    fn cap_ties_break_to_smaller_index() {
        let e = init_sequence_transitions(4, 0, 3.0);
        let prev = Belief::uniform(4);
        let params = ObservationParams {
            zeta: 0.0,
            cap: 2,
            ..Default::default()
        };
        let pt = promising_set(&prev, &e, &params);
        assert_eq!(pt.ids(), &[0, 1]);
    }

    #[test]
    fn empty_threshold_falls_back_to_argmax() {
        let e = init_sequence_transitions(5, 1, 3.0);
        let prev = Belief::uniform(5); // 0.2 each
        let params = ObservationParams {
            zeta: 0.5,
            cap: 10,
            ..Default::default()
        };
        let pt = promising_set(&prev, &e, &params);
        // argmax (tie -> 0) plus its successor
        assert_eq!(pt.ids(), &[0, 1]);
    }

    #[test]
    fn promising_successors_have_inbound_edges_from_seeds() {
        let e = init_sequence_transitions(30, 4, 3.0);
        let mut conf = vec![0.0; 30];
        conf[7] = 0.6;
        conf[20] = 0.4;
        let prev = Belief::from_unnormalized(conf).unwrap();
        let params = ObservationParams {
            zeta: 0.1,
            cap: 100,
            ..Default::default()
        };
        let pt = promising_set(&prev, &e, &params);
        let seeds = [7u32, 20];
        for &id in pt.ids() {
            let reachable = seeds
                .iter()
                .any(|&s| s == id || e.entry(s as usize, id as usize) > 0.0);
            assert!(reachable, "place {id} has no edge from a seed");
        }
    }

    #[test]
    fn active_transition_gathers_full_columns() {
        let e = init_sequence_transitions(10, 3, 3.0);
        let all = PromisingSet::from_ids((0..10).collect());
        let eac = active_transition(&e, &all);
        assert_eq!(eac.len(), 10);
        let total_in: usize = (0..10).map(|j| e.in_degree(j)).sum();
        assert_eq!(eac.nnz(), total_in);
        for (m, &p) in all.ids().iter().enumerate() {
            assert_eq!(eac.column(m), e.column(p as usize).as_slice());
        }
    }

    #[test]
    fn decision_is_argmax_with_smallest_index_ties() {
        let p = Belief::from_unnormalized(vec![0.2, 0.7, 0.1]).unwrap();
        assert_eq!(map_decision(&p), 1);
        let u = Belief::uniform(4);
        assert_eq!(map_decision(&u), 0);
        let exact = Belief::from_unnormalized(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(map_decision(&exact), 1);
    }

    #[test]
    fn decision_is_scale_invariant() {
        let conf = vec![0.1, 0.4, 0.25, 0.25];
        let a = Belief::from_unnormalized(conf.clone()).unwrap();
        let scaled: Vec<f64> = conf.iter().map(|x| x * 1234.5).collect();
        let b = Belief::from_unnormalized(scaled).unwrap();
        assert_eq!(map_decision(&a), map_decision(&b));
    }
}
