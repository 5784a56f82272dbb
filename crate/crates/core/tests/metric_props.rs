use proptest::prelude::*;
use sleepconf::metrics::{auroc_rank, classification_report, roc_pr, trapezoid_area};
use sleepconf::StageLabel;

fn stage() -> impl Strategy<Value = StageLabel> {
    (0usize..5).prop_map(StageLabel::from_index)
}

/// Scores drawn from a small set so ties are common.
fn scored_targets() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes present", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
}

fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn report_invariants(pairs in prop::collection::vec((stage(), stage()), 1..300)) {
        let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = classification_report(&truth, &pred).unwrap();
        let total: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total, truth.len() as u64);
        let diag: u64 = (0..5).map(|c| r.confusion[c][c]).sum();
        prop_assert!((r.acc - diag as f64 / total as f64).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&r.f1w));
        prop_assert!(r.kappa <= 1.0 + 1e-12);
        prop_assert!(r.f1w <= 1.0 + 1e-12);
    }

    #[test]
    fn rank_auroc_matches_pairwise_and_trapezoid((scores, y) in scored_targets()) {
        let rank = auroc_rank(&scores, &y);
        prop_assert!((rank - pairwise_auroc(&scores, &y)).abs() <= 1e-9);
        let curves = roc_pr(&scores, &y).unwrap();
        prop_assert!((trapezoid_area(&curves.roc_points) - rank).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&curves.aupr));
        for w in curves.roc_points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        prop_assert_eq!(*curves.roc_points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn auroc_ignores_monotone_transforms((scores, y) in scored_targets()) {
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert!((auroc_rank(&scores, &y) - auroc_rank(&squashed, &y)).abs() <= 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc_rank(&scores, &y) + auroc_rank(&flipped, &y) - 1.0).abs() <= 1e-12);
    }
}
