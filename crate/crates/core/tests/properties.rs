//! Property tests for the code metric, packing and map invariants.

mod common;

use proptest::prelude::*;

use hm4_core::graph::{init_sequence_transitions, ROW_SUM_TOLERANCE};
use hm4_core::{jaccard_distance, PolyCode};

fn code_strategy(feat_dim: u16, len: usize) -> impl Strategy<Value = PolyCode> {
    prop::collection::vec(0..2 * feat_dim, len)
        .prop_map(move |v| PolyCode::new(v, feat_dim).unwrap())
}

proptest! {
    /// Identity, symmetry and the triangle inequality hold exactly.
    #[test]
    fn jaccard_is_a_metric(
        a in code_strategy(4, 12),
        b in code_strategy(4, 12),
        c in code_strategy(4, 12),
    ) {
        let dab = jaccard_distance(&a, &b).unwrap();
        let dba = jaccard_distance(&b, &a).unwrap();
        let dac = jaccard_distance(&a, &c).unwrap();
        let dcb = jaccard_distance(&c, &b).unwrap();
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(jaccard_distance(&a, &a).unwrap(), 0.0);
        prop_assert!((dab == 0.0) == (a == b));
        // counts are exact integers over a common denominator, so no epsilon
        prop_assert!(dab <= dac + dcb);
        prop_assert!((0.0..=1.0).contains(&dab));
    }

    /// Bit packing round-trips at every feat_dim, including non-power-of-two
    /// symbol widths.
    #[test]
    fn packing_round_trips(
        feat_dim in 2u16..40,
        len in 1usize..64,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<u16> = (0..len).map(|_| rng.random_range(0..2 * feat_dim)).collect();
        let code = PolyCode::new(v, feat_dim).unwrap();
        let packed = code.pack();
        prop_assert_eq!(packed.len(), code.record_bytes());
        let back = PolyCode::unpack(&packed, feat_dim, len).unwrap();
        prop_assert_eq!(back, code);
    }

    /// Row-stochasticity survives arbitrary interleavings of appends and
    /// match insertions.
    #[test]
    fn map_rows_stay_stochastic(
        seqs in prop::collection::vec((1usize..20, 0usize..6), 1..6),
        links in prop::collection::vec((any::<u32>(), any::<u32>()), 0..40),
    ) {
        let mut e = init_sequence_transitions(seqs[0].0, seqs[0].1, 3.0);
        for &(frames, v_max) in &seqs[1..] {
            let prev_n = e.n();
            e.append_sequence(init_sequence_transitions(frames, v_max, 3.0));
            let t_len = e.n() - prev_n;
            let matches: Vec<(usize, usize)> = links
                .iter()
                .map(|&(t, p)| ((t as usize) % t_len, (p as usize) % prev_n))
                .collect();
            e.link_matches(prev_n, &matches).unwrap();
            prop_assert!(e.max_row_sum_error() < ROW_SUM_TOLERANCE);
        }
        // sparsity: every row stays within v_max + 1 plus its match edges
        for (i, row) in e.rows() {
            prop_assert!(row.len() <= 6 + 1 + links.len() + 1, "row {} has {} entries", i, row.len());
        }
    }
}
