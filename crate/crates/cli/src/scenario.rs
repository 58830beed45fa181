//! End-to-end scenario runner: bootstrap the database from the seed
//! sequences, replay each query sequence through the filter, link the
//! localized sequence back into the map, and refresh the coarse model.
//!
//! `run_scenario` drives the two-tiered engine against an on-disk store;
//! `run_baseline` runs the exact full-database filter with everything in
//! memory, as the comparison arm.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use hm4_core::graph::{build_submap, init_sequence_transitions_signed, TransitionMatrix};
use hm4_core::hmm::{baseline_filter_step, first_frame_step, hm4_step, map_decision, Belief};
use hm4_core::polyvlad::{kmodes_centroid, kmodes_cluster, write_rotation_file, write_vocab_file};
use hm4_core::store::{ActiveMemory, CoarseModel, PassiveStore, TieredState};
use hm4_core::{jaccard_distance, Error, PolyCode, Result};

use crate::config::{ParamBlock, ScenarioConfig};
use crate::report::{evaluate, Arm, EvaluationReport, SequenceMetrics, TraceRow};
use crate::world::{prepare, PreparedWorld, QuerySequence};

/// Runs the two-tiered engine. The store and report artifacts are written
/// under `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<EvaluationReport> {
    let world = prepare(cfg)?;
    let params = &cfg.params;
    let store_dir = out.join("store");

    let mut ps = PassiveStore::create(&store_dir, world.geometry)?;
    ps.set_read_delay(Duration::from_micros(params.ps_read_delay_us));
    ps.set_params(serde_json::to_value(params).expect("params serialize"))?;
    for seq in &world.db_sequences {
        ps.put_sequence(seq)?;
        ps.map_mut()
            .append_sequence(init_sequence_transitions_signed(
                seq.len(),
                params.v_max,
                params.delta,
                params.transition_exponent_sign,
            ));
    }
    ps.save_map()?;
    write_vocab_file(&store_dir.join("vocab.hm4v"), &world.vocab)?;
    write_rotation_file(&store_dir.join("rotations.hm4r"), &world.bank)?;

    let db_codes: Vec<PolyCode> = world.db_sequences.concat();
    let clusters = kmodes_cluster(
        &db_codes,
        params.k,
        params.kmodes_iters,
        params.cluster_seed(),
    )?;
    let submap = build_submap(ps.map(), &clusters)?;
    let coarse = CoarseModel::new(clusters, submap)?;
    ps.save_coarse(&coarse)?;
    let am = ActiveMemory::new(world.geometry, coarse)?;
    let mut state = TieredState::new(ps, am);

    let obs_params = params.observation();
    let mut place_positions = world.db_positions.clone();
    let mut trace = Vec::new();
    let mut sequences = Vec::new();
    let mut lost_events = 0usize;
    let mut max_belief_sum_error = 0.0f64;
    let mut t_global = 0u64;

    for (s, q) in world.queries.iter().enumerate() {
        let n_now = state.ps.map().n();
        let log_start = state.log.len();
        let mut belief: Option<Belief> = None;
        let mut decisions: Vec<(usize, bool)> = Vec::with_capacity(q.codes.len());
        for (frame, code) in q.codes.iter().enumerate() {
            let result = match &belief {
                None => first_frame_step(code, &mut state, &obs_params)?,
                Some(prev) => hm4_step(prev, code, &mut state, &obs_params)?,
            };
            if result.lost_state {
                lost_events += 1;
            }
            max_belief_sum_error = max_belief_sum_error.max((result.belief.sum() - 1.0).abs());
            trace.push(TraceRow {
                t: t_global,
                sequence: s as u32,
                frame: frame as u32,
                decision: result.decision as u32,
                error_m: (place_positions[result.decision] - q.positions[frame]).abs(),
                lost: result.lost_state,
            });
            decisions.push((result.decision, result.lost_state));
            belief = Some(result.belief);
            t_global += 1;
        }

        let slice = &state.log.entries()[log_start..];
        let resident_bytes_max = slice.iter().map(|e| e.am_bytes).max().unwrap_or(0);
        let mean_step_us =
            slice.iter().map(|e| e.step_micros as f64).sum::<f64>() / slice.len().max(1) as f64;
        let transfer_bytes: u64 = slice
            .iter()
            .map(|e| (e.code_bytes + e.eac_bytes) as u64)
            .sum();

        if cfg.update_after_each_sequence {
            update_database(&mut state, params, q, &decisions, &mut place_positions)?;
        }

        sequences.push(SequenceMetrics {
            sequence: s as u32,
            n_places: n_now,
            resident_bytes_max,
            transfer_bytes,
            mean_step_us,
            store_bytes: state.ps.store_bytes(),
        });
    }

    Ok(EvaluationReport {
        arm: Arm::Hm4,
        accuracy: evaluate(&trace, &cfg.thresholds_m),
        sequences,
        lost_events,
        max_belief_sum_error,
        final_places: state.ps.map().n(),
        seed: params.seed,
        trace,
        steps: state.log.entries().to_vec(),
    })
}

/// Appends the localized sequence: map growth and match edges, code
/// storage, cluster membership for every frame, centroid recomputation for
/// the touched clusters, submap rebuild, and the active-memory refresh.
fn update_database(
    state: &mut TieredState,
    params: &ParamBlock,
    q: &QuerySequence,
    decisions: &[(usize, bool)],
    place_positions: &mut Vec<f64>,
) -> Result<()> {
    let prev_n = state.ps.map().n();
    state
        .ps
        .map_mut()
        .append_sequence(init_sequence_transitions_signed(
            q.codes.len(),
            params.v_max,
            params.delta,
            params.transition_exponent_sign,
        ));
    let matches: Vec<(usize, usize)> = decisions
        .iter()
        .enumerate()
        .map(|(t, &(decision, _))| (t, decision))
        .collect();
    state.ps.map_mut().link_matches(prev_n, &matches)?;

    let range = state.ps.put_sequence(&q.codes)?;
    debug_assert_eq!(range.start as usize, prev_n);
    debug_assert_eq!(state.ps.code_count() as usize, state.ps.map().n());
    place_positions.extend_from_slice(&q.positions);

    let mut clusters = state.am.clusters().clone();
    let mut changed: BTreeSet<u32> = BTreeSet::new();
    for (t, &(decision, lost)) in decisions.iter().enumerate() {
        // a localized frame joins its matched image's cluster; a lost frame
        // falls back to the nearest centroid
        let target = if lost {
            nearest_centroid(&q.codes[t], clusters.centroids())?
        } else {
            clusters.cluster_of(decision)
        };
        clusters.push_assignment(target)?;
        changed.insert(target);
    }

    let mut changed_pairs: Vec<(u32, PolyCode)> = Vec::new();
    for &k in &changed {
        let members: Vec<u32> = clusters
            .members(k as usize)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        let member_codes = state.ps.get_codes(&members)?;
        let refs: Vec<&PolyCode> = member_codes.iter().collect();
        let centroid = kmodes_centroid(&refs)?;
        if &centroid != clusters.centroid(k as usize) {
            clusters.set_centroid(k as usize, centroid.clone())?;
            changed_pairs.push((k, centroid));
        }
    }

    let submap = build_submap(state.ps.map(), &clusters)?;
    let coarse = CoarseModel::new(clusters, submap)?;
    state.ps.save_coarse(&coarse)?;
    state.ps.save_map()?;
    state.am.update_coarse(coarse, &changed_pairs)?;
    Ok(())
}

fn nearest_centroid(code: &PolyCode, centroids: &[PolyCode]) -> Result<u32> {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = jaccard_distance(code, c)?;
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    Ok(best as u32)
}

/// Runs the exact full-database filter over the same scenario, holding
/// every code and the whole map in memory.
pub fn run_baseline(cfg: &ScenarioConfig, _out: &Path) -> Result<EvaluationReport> {
    let world = prepare(cfg)?;
    let params = &cfg.params;
    let obs = params.observation();
    obs.validate()?;

    let mut codes: Vec<PolyCode> = world.db_sequences.concat();
    let mut map = TransitionMatrix::new();
    for seq in &world.db_sequences {
        map.append_sequence(init_sequence_transitions_signed(
            seq.len(),
            params.v_max,
            params.delta,
            params.transition_exponent_sign,
        ));
    }
    let rec = world.geometry.record_bytes();

    let mut place_positions = world.db_positions.clone();
    let mut trace = Vec::new();
    let mut sequences = Vec::new();
    let mut lost_events = 0usize;
    let mut max_belief_sum_error = 0.0f64;
    let mut t_global = 0u64;

    for (s, q) in world.queries.iter().enumerate() {
        let n_now = map.n();
        let mut belief = Belief::uniform(n_now);
        let mut decisions: Vec<(usize, bool)> = Vec::with_capacity(q.codes.len());
        let mut step_us_total = 0f64;
        for (frame, code) in q.codes.iter().enumerate() {
            let start = Instant::now();
            let logs: Vec<f64> = codes
                .iter()
                .map(|c| -jaccard_distance(code, c).unwrap() / params.sigma)
                .collect();
            let shift = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let likelihoods: Vec<f64> = logs.iter().map(|&l| (l - shift).exp()).collect();
            let (next, lost) = match baseline_filter_step(&map, &likelihoods, &belief) {
                Ok(b) => (b, false),
                Err(Error::LostState) => {
                    // observation-only recovery, mirroring the two-tiered arm
                    (Belief::from_unnormalized(likelihoods)?, true)
                }
                Err(e) => return Err(e),
            };
            step_us_total += start.elapsed().as_micros() as f64;
            if lost {
                lost_events += 1;
            }
            max_belief_sum_error = max_belief_sum_error.max((next.sum() - 1.0).abs());
            let decision = map_decision(&next);
            trace.push(TraceRow {
                t: t_global,
                sequence: s as u32,
                frame: frame as u32,
                decision: decision as u32,
                error_m: (place_positions[decision] - q.positions[frame]).abs(),
                lost,
            });
            decisions.push((decision, lost));
            belief = next;
            t_global += 1;
        }

        let resident_bytes_max = codes.len() * rec + map.file_bytes();
        if cfg.update_after_each_sequence {
            let prev_n = map.n();
            map.append_sequence(init_sequence_transitions_signed(
                q.codes.len(),
                params.v_max,
                params.delta,
                params.transition_exponent_sign,
            ));
            let matches: Vec<(usize, usize)> = decisions
                .iter()
                .enumerate()
                .map(|(t, &(d, _))| (t, d))
                .collect();
            map.link_matches(prev_n, &matches)?;
            codes.extend(q.codes.iter().cloned());
            place_positions.extend_from_slice(&q.positions);
        }

        sequences.push(SequenceMetrics {
            sequence: s as u32,
            n_places: n_now,
            resident_bytes_max,
            transfer_bytes: 0,
            mean_step_us: step_us_total / q.codes.len().max(1) as f64,
            store_bytes: (codes.len() * rec + map.file_bytes()) as u64,
        });
    }

    Ok(EvaluationReport {
        arm: Arm::Baseline,
        accuracy: evaluate(&trace, &cfg.thresholds_m),
        sequences,
        lost_events,
        max_belief_sum_error,
        final_places: map.n(),
        seed: params.seed,
        trace,
        steps: Vec::new(),
    })
}

/// Used by the `encode` subcommand: persist a code database (plus map,
/// vocabulary and rotations) for the database sequences of a config.
pub fn encode_to_store(cfg: &ScenarioConfig, out: &Path) -> Result<PreparedWorld> {
    let world = prepare(cfg)?;
    let params = &cfg.params;
    let mut ps = PassiveStore::create(out, world.geometry)?;
    ps.set_params(serde_json::to_value(params).expect("params serialize"))?;
    for seq in &world.db_sequences {
        ps.put_sequence(seq)?;
        ps.map_mut()
            .append_sequence(init_sequence_transitions_signed(
                seq.len(),
                params.v_max,
                params.delta,
                params.transition_exponent_sign,
            ));
    }
    ps.save_map()?;
    write_vocab_file(&out.join("vocab.hm4v"), &world.vocab)?;
    write_rotation_file(&out.join("rotations.hm4r"), &world.bank)?;
    Ok(world)
}

/// Used by the `cluster` subcommand: build the coarse model for an
/// existing store. A map override replaces the store's topological map
/// before the submap is derived.
pub fn cluster_store(
    store_dir: &Path,
    k: usize,
    iters: usize,
    seed: u64,
    map_override: Option<&Path>,
) -> Result<()> {
    let mut ps = PassiveStore::open(store_dir)?;
    if let Some(path) = map_override {
        let map = hm4_core::graph::read_map_file(path)?;
        if map.n() != ps.code_count() as usize {
            return Err(Error::InvalidArgument(format!(
                "map covers {} places but the store holds {} codes",
                map.n(),
                ps.code_count()
            )));
        }
        *ps.map_mut() = map;
        ps.save_map()?;
    }
    let ids: Vec<u32> = (0..ps.code_count() as u32).collect();
    let codes = ps.get_codes(&ids)?;
    let clusters = kmodes_cluster(&codes, k, iters, seed)?;
    let submap = build_submap(ps.map(), &clusters)?;
    let coarse = CoarseModel::new(clusters, submap)?;
    ps.save_coarse(&coarse)?;
    Ok(())
}
