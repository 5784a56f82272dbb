use std::collections::BTreeSet;

use proptest::prelude::*;
use sleepconf::measures::{compute_measure, MeasureId};
use sleepconf::{DomainTag, PairOutput, Recording, StageLabel};

/// Rows of positive weights normalised in f32, as stored in a container.
fn softmax_row() -> impl Strategy<Value = [f32; 5]> {
    prop::array::uniform5(0.001f64..1.0).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.map(|v| (v / s) as f32)
    })
}

/// Rows with exactly representable components summing to 1: counts out of 2^20.
fn dyadic_row() -> impl Strategy<Value = [f32; 5]> {
    prop::array::uniform4(1u32..=(1 << 18)).prop_map(|k| {
        let denom = (1u32 << 20) as f32;
        let last = (1u32 << 20) - k.iter().sum::<u32>();
        [k[0], k[1], k[2], k[3], last].map(|c| c as f32 / denom)
    })
}

fn recording(pairs: Vec<Vec<[f32; 5]>>) -> Recording {
    let t = pairs[0].len();
    Recording {
        recording_id: "r".into(),
        subject_id: "s".into(),
        scorer_id: "x".into(),
        domain_tag: DomainTag::IdTest,
        diagnoses: BTreeSet::new(),
        labels: Some(vec![StageLabel::N2; t]),
        pairs: pairs
            .into_iter()
            .map(|softmax| PairOutput { softmax, hidden: None })
            .collect(),
    }
}

fn pairs_strategy() -> impl Strategy<Value = Vec<Vec<[f32; 5]>>> {
    (1usize..4, 1usize..12).prop_flat_map(|(m, t)| {
        prop::collection::vec(prop::collection::vec(softmax_row(), t), m)
    })
}

proptest! {
    #[test]
    fn raw_values_stay_in_range(pairs in pairs_strategy()) {
        let rec = recording(pairs);
        let t = rec.n_epochs() as f64;
        let tol = 1e-9;
        for m in MeasureId::ALL {
            let s = compute_measure(m, &rec);
            for &v in &s.raw_values {
                let (lo, hi) = match m {
                    MeasureId::EntropyAvg => (0.0, 5f64.log2()),
                    MeasureId::RatioAvg | MeasureId::MaxMajority => (0.2, 1.0),
                    MeasureId::StdAvg | MeasureId::StdMajority => (0.0, 0.4),
                    MeasureId::PctMu | MeasureId::PctSigma => (0.5 / t, 1.0),
                };
                prop_assert!(v >= lo - tol && v <= hi + tol, "{m} value {v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn pair_order_does_not_matter(pairs in pairs_strategy(), shift in 0usize..3) {
        let mut rotated = pairs.clone();
        let k = shift % rotated.len();
        rotated.rotate_left(k);
        let a = recording(pairs);
        let b = recording(rotated);
        for m in MeasureId::ALL {
            let (x, y) = (compute_measure(m, &a), compute_measure(m, &b));
            for (u, v) in x.raw_values.iter().zip(&y.raw_values) {
                prop_assert!((u - v).abs() <= 1e-12, "{m}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn single_pair_ratio_is_inverse_of_five_mu(rows in prop::collection::vec(dyadic_row(), 1..20)) {
        let rec = recording(vec![rows]);
        let ratio = compute_measure(MeasureId::RatioAvg, &rec);
        let mu = compute_measure(MeasureId::MaxMajority, &rec);
        for (r, m) in ratio.raw_values.iter().zip(&mu.raw_values) {
            prop_assert!((r - 1.0 / (5.0 * m)).abs() <= 1e-12);
        }
    }

    #[test]
    fn oriented_scores_follow_uncertainty(pairs in pairs_strategy()) {
        let rec = recording(pairs);
        for m in [MeasureId::StdAvg, MeasureId::MaxMajority, MeasureId::StdMajority] {
            let s = compute_measure(m, &rec);
            for (raw, score) in s.raw_values.iter().zip(&s.scores) {
                prop_assert_eq!(*score, -raw);
            }
        }
    }

    #[test]
    fn peaking_never_raises_entropy_score(row in softmax_row(), frac in 0.0f64..1.0) {
        let p = row.map(|v| v as f64);
        let top = sleepconf::data::argmax(&p);
        let mut peaked = p;
        let mut moved = 0.0;
        for (k, v) in peaked.iter_mut().enumerate() {
            if k != top {
                moved += *v * frac;
                *v -= *v * frac;
            }
        }
        peaked[top] += moved;
        let before = compute_measure(MeasureId::EntropyAvg, &recording(vec![vec![p.map(|v| v as f32)]]));
        let after = compute_measure(MeasureId::EntropyAvg, &recording(vec![vec![peaked.map(|v| v as f32)]]));
        prop_assert!(after.scores[0] <= before.scores[0] + 1e-6);
    }
}
