//! Backpropagation-through-time gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepconf::confnet::{
    forward, init_model, loss_and_gradients, ConfNetConfig, ConfidenceModelParams, ForwardMode, LayerSpec,
};
use sleepconf::features::{FeatureSequence, FEATURE_DIM};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error. A step-1e-5 central difference
/// in f64 carries roughly 1e-12 of rounding noise, so components below this
/// are effectively held to an absolute error of REL_TOL * ABS_FLOOR.
const ABS_FLOOR: f64 = 1e-7;

fn random_setup(config: ConfNetConfig, len: usize, seed: u64) -> (ConfidenceModelParams, FeatureSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_model(&config).unwrap();
    params.norm_mean = (0..FEATURE_DIM).map(|_| rng.gen_range(-0.5..0.5)).collect();
    params.norm_var = (0..FEATURE_DIM).map(|_| rng.gen_range(0.5..2.0)).collect();
    let seq = FeatureSequence {
        recording_id: "g".into(),
        pair_index: 0,
        features: (0..len)
            .map(|_| {
                let mut row = [0.0; FEATURE_DIM];
                row.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
                row
            })
            .collect(),
        // targets at 0 or 1 keep |y - t| away from its kink
        targets: Some((0..len).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect()),
    };
    (params, seq)
}

/// Worst relative error over all parameter components.
fn check(params: &ConfidenceModelParams, seq: &FeatureSequence, mode: ForwardMode) -> f64 {
    let (_, grad) = loss_and_gradients(params, &[seq], mode).unwrap();
    let analytic = grad.to_flat();
    let base = params.to_flat();
    // Targets are 0 or 1 and outputs stay inside (0, 1), so each epoch's
    // |y - t| keeps its sign and the loss difference is a signed sum of
    // output differences. Differencing outputs avoids cancelling against
    // the O(1) loss value.
    let targets = seq.targets.as_ref().unwrap();
    let n = targets.len() as f64;
    let sign: Vec<f64> = targets.iter().map(|&t| if t > 0.5 { -1.0 } else { 1.0 }).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += STEP;
        probe.set_flat(&plus);
        let yp = forward(&probe, seq, mode).unwrap();
        let mut minus = base.clone();
        minus[i] -= STEP;
        probe.set_flat(&minus);
        let ym = forward(&probe, seq, mode).unwrap();
        let numeric = yp.iter().zip(&ym).zip(&sign).map(|((a, b), s)| s * (a - b)).sum::<f64>() / (n * 2.0 * STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn configs() -> Vec<ConfNetConfig> {
    let mut out = Vec::new();
    for (k, sizes) in [[3, 2, 2, 2, 1], [4, 3, 2, 2, 1], [2, 2, 3, 2, 1], [5, 2, 2, 1, 1], [3, 3, 3, 3, 1]]
        .into_iter()
        .enumerate()
    {
        out.push(ConfNetConfig::with_sizes(sizes, k as u64));
    }
    out.push(ConfNetConfig {
        input_dim: FEATURE_DIM,
        layers: vec![LayerSpec::bilstm(3), LayerSpec::lstm(1)],
        dropout_rate: 0.25,
        seed: 7,
    });
    out
}

#[test]
fn gradients_match_finite_differences() {
    for (k, cfg) in configs().into_iter().enumerate() {
        let (params, seq) = random_setup(cfg, 4 + k, 100 + k as u64);
        let worst = check(&params, &seq, ForwardMode::Inference);
        assert!(worst <= REL_TOL, "config {k}: worst relative error {worst:e}");
    }
}

#[test]
fn gradients_match_with_seeded_dropout() {
    for (k, cfg) in configs().into_iter().take(3).enumerate() {
        let (params, seq) = random_setup(cfg, 7, 200 + k as u64);
        let worst = check(&params, &seq, ForwardMode::Training { seed: 5 });
        assert!(worst <= REL_TOL, "config {k}: worst relative error {worst:e}");
    }
}
