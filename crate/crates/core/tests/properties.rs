//! Randomized invariants checked with proptest.

use std::collections::BTreeMap;

use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;

use apodistill::core::Categorical;
use apodistill::distill::{barycenter, PredictiveSet};
use apodistill::io::{read_corpus, write_corpus, TrajectoryRecord};

fn record_strategy() -> impl Strategy<Value = TrajectoryRecord> {
    (
        "[a-z0-9-]{1,16}",
        vec(0u32..64, 1..6),
        "[a-z0-9]{1,8}",
        (1usize..8).prop_flat_map(|len| {
            (
                vec(0u32..64, len),
                option::of(vec(-50.0f64..=0.0, len)),
            )
        }),
        0i64..10_000,
        btree_map(".{0,12}", ".{0,24}", 0..4),
    )
        .prop_map(
            |(id, context, teacher_id, (tokens, step_logprobs), corpus_step, meta)| {
                TrajectoryRecord {
                    id,
                    context,
                    teacher_id,
                    tokens,
                    step_logprobs,
                    corpus_step,
                    meta: meta
                        .into_iter()
                        .collect::<BTreeMap<String, String>>(),
                }
            },
        )
}

fn distribution_strategy(v: usize) -> impl Strategy<Value = Categorical> {
    vec(1e-6f64..1.0, v).prop_map(|raw| {
        let sum: f64 = raw.iter().sum();
        Categorical::new(raw.into_iter().map(|x| x / sum).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Corpus files survive a write -> read cycle for arbitrary records,
    /// including metadata with quotes, newlines, and non-ASCII text.
    #[test]
    fn corpus_round_trips(records in vec(record_strategy(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&records, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        prop_assert_eq!(records, back);
    }

    /// The barycenter is a proper distribution bounded component-wise by the
    /// inputs, and collapses to the common distribution when all inputs agree.
    #[test]
    fn barycenter_stays_in_hull(
        set in vec(distribution_strategy(4), 1..6),
        pick in 0usize..6,
    ) {
        let zset = PredictiveSet::new(set.clone()).unwrap();
        let bary = barycenter(&zset, None);
        let total: f64 = bary.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for v in 0..4 {
            let lo = set.iter().map(|p| p.probs()[v]).fold(f64::INFINITY, f64::min);
            let hi = set.iter().map(|p| p.probs()[v]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(bary.probs()[v] >= lo - 1e-12 && bary.probs()[v] <= hi + 1e-12);
        }

        let shared = set[pick % set.len()].clone();
        let same = PredictiveSet::new(vec![shared.clone(); 3]).unwrap();
        let collapsed = barycenter(&same, None);
        for (a, b) in collapsed.probs().iter().zip(shared.probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// Degenerate weight vectors reproduce the selected input exactly up to
    /// floating-point normalization.
    #[test]
    fn barycenter_degenerate_weights(
        set in vec(distribution_strategy(5), 2..5),
        pick in 0usize..5,
    ) {
        let idx = pick % set.len();
        let weights: Vec<f64> = (0..set.len()).map(|u| if u == idx { 1.0 } else { 0.0 }).collect();
        let zset = PredictiveSet::new(set.clone()).unwrap();
        let bary = barycenter(&zset, Some(&weights));
        for (a, b) in bary.probs().iter().zip(set[idx].probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
