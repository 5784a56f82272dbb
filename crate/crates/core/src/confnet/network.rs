use rand::Rng;

use super::lstm::{lstm_backward, lstm_forward, reverse_rows, CellActivation, LstmTrace};
use super::{ConfidenceModelParams, LayerParams};
use crate::data::Recording;
use crate::error::{Error, Result};
use crate::features::{assemble_features, FeatureSequence};
use crate::rng::stream_rng;
use crate::scores::{ScoreSource, UncertaintyScoreSeries};

/// Variance floor used by the input standardization.
pub const NORM_EPS: f64 = 1e-3;
/// Outputs are kept inside `[OUT_MIN, 1 - OUT_MIN]` so the (0, 1) range
/// survives floating-point saturation of the gates.
const OUT_MIN: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Inference,
    /// Inverted dropout between layers, masks drawn from `seed`.
    Training { seed: u64 },
}

enum LayerTrace {
    Uni(LstmTrace),
    Bi { fwd: LstmTrace, bwd: LstmTrace },
}

struct NetTrace {
    len: usize,
    layers: Vec<LayerTrace>,
    /// Dropout mask applied to each layer's output (none for the output layer).
    masks: Vec<Option<Vec<f64>>>,
    raw_output: Vec<f64>,
    output: Vec<f64>,
}

fn standardize(params: &ConfidenceModelParams, seq: &FeatureSequence) -> Result<Vec<f64>> {
    let d = params.config.input_dim;
    let mut flat = Vec::with_capacity(seq.len() * d);
    for row in &seq.features {
        if row.len() != d {
            return Err(Error::Shape(format!(
                "feature width {} does not match model input_dim {d}",
                row.len()
            )));
        }
        for (k, &x) in row.iter().enumerate() {
            flat.push((x - params.norm_mean[k]) / (params.norm_var[k] + NORM_EPS).sqrt());
        }
    }
    Ok(flat)
}

fn layer_forward(layer: &LayerParams, input: &[f64], len: usize, act: CellActivation) -> (Vec<f64>, LayerTrace) {
    match &layer.backward {
        None => {
            let trace = lstm_forward(&layer.forward, input, len, act);
            (trace.hidden.clone(), LayerTrace::Uni(trace))
        }
        Some(bw) => {
            let h = layer.forward.units;
            let ni = layer.forward.input_dim;
            let fwd = lstm_forward(&layer.forward, input, len, act);
            let bwd = lstm_forward(bw, &reverse_rows(input, len, ni), len, act);
            let mut out = Vec::with_capacity(len * 2 * h);
            for t in 0..len {
                out.extend_from_slice(&fwd.hidden[t * h..(t + 1) * h]);
                let rt = len - 1 - t;
                out.extend_from_slice(&bwd.hidden[rt * h..(rt + 1) * h]);
            }
            (out, LayerTrace::Bi { fwd, bwd })
        }
    }
}

fn run(params: &ConfidenceModelParams, seq: &FeatureSequence, mode: ForwardMode) -> Result<NetTrace> {
    let len = seq.len();
    let mut x = standardize(params, seq)?;
    let n_layers = params.layers.len();
    let mut layers = Vec::with_capacity(n_layers);
    let mut masks = Vec::with_capacity(n_layers);
    let rate = params.config.dropout_rate;
    for (li, layer) in params.layers.iter().enumerate() {
        let last = li + 1 == n_layers;
        let act = if last { CellActivation::HalfTanh } else { CellActivation::Tanh };
        let (mut out, trace) = layer_forward(layer, &x, len, act);
        layers.push(trace);
        let mask = match mode {
            ForwardMode::Training { seed } if !last && rate > 0.0 => {
                let mut rng = stream_rng(seed, li as u64);
                let keep = 1.0 / (1.0 - rate);
                let m: Vec<f64> = (0..out.len())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                out.iter_mut().zip(&m).for_each(|(o, k)| *o *= k);
                Some(m)
            }
            _ => None,
        };
        masks.push(mask);
        x = out;
    }
    let output = x.iter().map(|v| v.clamp(OUT_MIN, 1.0 - OUT_MIN)).collect();
    Ok(NetTrace {
        len,
        layers,
        masks,
        raw_output: x,
        output,
    })
}

/// Predicted TCP sequence for one channel pair, each value in (0, 1).
pub fn forward(params: &ConfidenceModelParams, seq: &FeatureSequence, mode: ForwardMode) -> Result<Vec<f64>> {
    Ok(run(params, seq, mode)?.output)
}

pub fn predict_sequence(params: &ConfidenceModelParams, seq: &FeatureSequence) -> Result<Vec<f64>> {
    forward(params, seq, ForwardMode::Inference)
}

fn backward(params: &ConfidenceModelParams, trace: &NetTrace, d_output: Vec<f64>, grad: &mut ConfidenceModelParams) {
    let len = trace.len;
    let mut d = d_output;
    for li in (0..params.layers.len()).rev() {
        if let Some(mask) = &trace.masks[li] {
            d.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let layer = &params.layers[li];
        let glayer = &mut grad.layers[li];
        d = match &trace.layers[li] {
            LayerTrace::Uni(t) => lstm_backward(&layer.forward, t, &d, &mut glayer.forward),
            LayerTrace::Bi { fwd, bwd } => {
                let h = layer.forward.units;
                let ni = layer.forward.input_dim;
                let mut df = vec![0.0; len * h];
                let mut db = vec![0.0; len * h];
                for t in 0..len {
                    let rt = len - 1 - t;
                    df[t * h..(t + 1) * h].copy_from_slice(&d[t * 2 * h..t * 2 * h + h]);
                    db[rt * h..(rt + 1) * h].copy_from_slice(&d[t * 2 * h + h..(t + 1) * 2 * h]);
                }
                let bw = layer.backward.as_ref().expect("bidirectional layer");
                let gbw = glayer.backward.as_mut().expect("bidirectional layer");
                let mut dx = lstm_backward(&layer.forward, fwd, &df, &mut glayer.forward);
                let dxb = reverse_rows(&lstm_backward(bw, bwd, &db, gbw), len, ni);
                dx.iter_mut().zip(dxb).for_each(|(a, b)| *a += b);
                dx
            }
        };
    }
}

/// Mean absolute error over every epoch of the batch and its gradient.
///
/// The subgradient of `|x|` at 0 is taken as 0. Each sequence in training
/// mode draws its dropout masks from `seed + index`.
pub fn loss_and_gradients(
    params: &ConfidenceModelParams,
    batch: &[&FeatureSequence],
    mode: ForwardMode,
) -> Result<(f64, ConfidenceModelParams)> {
    let total: usize = batch.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (i, seq) in batch.iter().enumerate() {
        let targets = seq.targets.as_ref().ok_or_else(|| {
            Error::Shape(format!("sequence {} pair {} has no targets", seq.recording_id, seq.pair_index))
        })?;
        let seq_mode = match mode {
            ForwardMode::Training { seed } => ForwardMode::Training { seed: seed.wrapping_add(i as u64) },
            m => m,
        };
        let trace = run(params, seq, seq_mode)?;
        let d_output: Vec<f64> = trace
            .output
            .iter()
            .zip(&trace.raw_output)
            .zip(targets)
            .map(|((&y, &raw), &target)| {
                let diff = y - target;
                loss += diff.abs();
                let clamped = raw != y;
                if diff == 0.0 || clamped {
                    0.0
                } else {
                    diff.signum() / total as f64
                }
            })
            .collect();
        backward(params, &trace, d_output, &mut grad);
    }
    let loss = loss / total as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    Ok((loss, grad))
}

/// Channel-pair mean of the predicted TCP; oriented score is `1 - TCP`.
pub fn predict_tcp(params: &ConfidenceModelParams, recording: &Recording) -> Result<UncertaintyScoreSeries> {
    let seqs = assemble_features(recording)?;
    let mut mean = vec![0.0; recording.n_epochs()];
    for seq in &seqs {
        for (m, v) in mean.iter_mut().zip(predict_sequence(params, seq)?) {
            *m += v;
        }
    }
    let n = seqs.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(UncertaintyScoreSeries::from_tcp(&recording.recording_id, ScoreSource::Tcp, mean))
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ConfNetConfig, LayerSpec};
    use super::*;
    use crate::features::FEATURE_DIM;
    use rand::SeedableRng;

    fn random_seq(len: usize, seed: u64) -> FeatureSequence {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureSequence {
            recording_id: "r".into(),
            pair_index: 0,
            features: (0..len)
                .map(|_| {
                    let mut row = [0.0; FEATURE_DIM];
                    row.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
                    row
                })
                .collect(),
            targets: Some((0..len).map(|_| rng.gen_range(0.0..1.0)).collect()),
        }
    }

    #[test]
    fn zero_weights_output_quarter() {
        let params = ConfidenceModelParams::zeros(&ConfNetConfig::default());
        let out = predict_sequence(&params, &random_seq(9, 1)).unwrap();
        assert!(out.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn zero_weights_mae_against_half() {
        let params = ConfidenceModelParams::zeros(&ConfNetConfig::default());
        let mut seq = random_seq(6, 2);
        seq.targets = Some(vec![0.5; 6]);
        let (loss, _) = loss_and_gradients(&params, &[&seq], ForwardMode::Inference).unwrap();
        assert_eq!(loss, 0.25);
    }

    #[test]
    fn perfect_targets_give_zero_loss_and_gradient() {
        let params = init_model(&ConfNetConfig::with_sizes([3, 2, 2, 2, 1], 4)).unwrap();
        let mut seq = random_seq(5, 3);
        seq.targets = Some(predict_sequence(&params, &seq).unwrap());
        let (loss, grad) = loss_and_gradients(&params, &[&seq], ForwardMode::Inference).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut cfg = ConfNetConfig::with_sizes([3, 2, 2, 2, 1], 0);
        cfg.input_dim = 13;
        cfg.layers[0] = LayerSpec::lstm(3);
        let params = init_model(&cfg).unwrap();
        assert!(matches!(predict_sequence(&params, &random_seq(3, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_only_in_training() {
        let params = init_model(&ConfNetConfig::with_sizes([6, 4, 3, 2, 1], 1)).unwrap();
        let seq = random_seq(8, 5);
        let a = forward(&params, &seq, ForwardMode::Inference).unwrap();
        let b = forward(&params, &seq, ForwardMode::Inference).unwrap();
        assert_eq!(a, b);
        let c = forward(&params, &seq, ForwardMode::Training { seed: 1 }).unwrap();
        let d = forward(&params, &seq, ForwardMode::Training { seed: 1 }).unwrap();
        assert_eq!(c, d);
        assert_ne!(a, c);
    }

    #[test]
    fn bidirectional_direction_symmetry() {
        // one BiLSTM layer with identical directions: the backward half on the
        // reversed input is the reversed forward half on the original input
        let cfg = ConfNetConfig {
            input_dim: FEATURE_DIM,
            layers: vec![LayerSpec::bilstm(3), LayerSpec::lstm(1)],
            dropout_rate: 0.0,
            seed: 9,
        };
        let mut params = init_model(&cfg).unwrap();
        let fw = params.layers[0].forward.clone();
        params.layers[0].backward = Some(fw);
        let seq = random_seq(7, 11);
        let x = standardize(&params, &seq).unwrap();
        let (out, _) = layer_forward(&params.layers[0], &x, 7, CellActivation::Tanh);
        let xr = reverse_rows(&x, 7, FEATURE_DIM);
        let (out_r, _) = layer_forward(&params.layers[0], &xr, 7, CellActivation::Tanh);
        for t in 0..7 {
            let rt = 6 - t;
            assert_eq!(&out[t * 6..t * 6 + 3], &out_r[rt * 6 + 3..rt * 6 + 6]);
            assert_eq!(&out[t * 6 + 3..t * 6 + 6], &out_r[rt * 6..rt * 6 + 3]);
        }
    }
}
