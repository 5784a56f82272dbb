//! Auxiliary confidence network: a stack of LSTM layers that maps the
//! per-epoch feature sequence of one channel pair to a sequence of predicted
//! true-class probabilities.
//!
//! Default stack: input standardization (frozen statistics, no learned
//! affine), LSTM(50) → BiLSTM(30 per direction) → LSTM(10) → LSTM(5) →
//! output LSTM(1) whose cell output is squashed by `(tanh(c) + 1) / 2`.
//! Each gate has a single bias, so a layer of `h` units on `i` inputs holds
//! `4h(i + h + 1)` weights and the default stack has 35628.

mod io;
mod lstm;
mod network;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{forward, loss_and_gradients, predict_tcp, predict_sequence, ForwardMode};
pub use train::{
    feature_statistics, history_csv, train, Adam, EpochRecord, TrainConfig, TrainOutcome,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub bidirectional: bool,
}

impl LayerSpec {
    pub fn lstm(units: usize) -> Self {
        LayerSpec {
            units,
            bidirectional: false,
        }
    }

    pub fn bilstm(units: usize) -> Self {
        LayerSpec {
            units,
            bidirectional: true,
        }
    }

    pub fn output_width(&self) -> usize {
        if self.bidirectional {
            2 * self.units
        } else {
            self.units
        }
    }
}

/// Layer stack; the last entry is the single-unit output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfNetConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ConfNetConfig {
    fn default() -> Self {
        ConfNetConfig::with_sizes([50, 30, 10, 5, 1], 0)
    }
}

impl ConfNetConfig {
    /// `[lstm, bilstm, lstm, lstm, output]` sizes on 14 inputs.
    pub fn with_sizes(sizes: [usize; 5], seed: u64) -> Self {
        ConfNetConfig {
            input_dim: FEATURE_DIM,
            layers: vec![
                LayerSpec::lstm(sizes[0]),
                LayerSpec::bilstm(sizes[1]),
                LayerSpec::lstm(sizes[2]),
                LayerSpec::lstm(sizes[3]),
                LayerSpec::lstm(sizes[4]),
            ],
            dropout_rate: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        let Some(last) = self.layers.last() else {
            return bad("at least the output layer is required".into());
        };
        if last.units != 1 || last.bidirectional {
            return bad(format!("output layer must be a 1-unit LSTM, got {last:?}"));
        }
        if self.layers.iter().any(|l| l.units == 0) {
            return bad("layer with zero units".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Input width of each layer.
    pub fn layer_inputs(&self) -> Vec<usize> {
        let mut width = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                let i = width;
                width = l.output_width();
                i
            })
            .collect()
    }

    /// Learned weights per layer, both directions included.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .zip(self.layer_inputs())
            .map(|(l, i)| {
                let dirs = if l.bidirectional { 2 } else { 1 };
                dirs * 4 * l.units * (i + l.units + 1)
            })
            .collect()
    }
}

/// Gate weights of one LSTM direction. `w` is `4h × (i + h)` row-major over
/// `[x_t; h_{t-1}]`, gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub units: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        LstmWeights {
            input_dim,
            units,
            w: vec![0.0; 4 * units * (input_dim + units)],
            b: vec![0.0; 4 * units],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub forward: LstmWeights,
    pub backward: Option<LstmWeights>,
}

impl LayerParams {
    fn directions(&self) -> impl Iterator<Item = &LstmWeights> {
        std::iter::once(&self.forward).chain(self.backward.as_ref())
    }

    fn directions_mut(&mut self) -> impl Iterator<Item = &mut LstmWeights> {
        std::iter::once(&mut self.forward).chain(self.backward.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceModelParams {
    pub config: ConfNetConfig,
    pub layers: Vec<LayerParams>,
    pub norm_mean: Vec<f64>,
    pub norm_var: Vec<f64>,
}

impl ConfidenceModelParams {
    pub fn zeros(config: &ConfNetConfig) -> Self {
        let layers = config
            .layers
            .iter()
            .zip(config.layer_inputs())
            .map(|(spec, i)| LayerParams {
                forward: LstmWeights::zeros(i, spec.units),
                backward: spec.bidirectional.then(|| LstmWeights::zeros(i, spec.units)),
            })
            .collect();
        ConfidenceModelParams {
            config: config.clone(),
            layers,
            norm_mean: vec![0.0; config.input_dim],
            norm_var: vec![1.0; config.input_dim],
        }
    }

    /// Same shape, all learned weights zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = ConfidenceModelParams::zeros(&self.config);
        z.norm_mean.clone_from(&self.norm_mean);
        z.norm_var.clone_from(&self.norm_var);
        z
    }

    /// Learned tensors in file order: per layer, forward w, forward b, backward w, backward b.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.directions())
            .flat_map(|d| [d.w.as_slice(), d.b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.directions_mut())
            .flat_map(|d| [&mut d.w, &mut d.b])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    /// Round every stored value to the nearest f32 so the model file round-trips exactly.
    pub fn quantize(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self.norm_mean.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self.norm_var.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Learned-parameter count; normalization statistics are not counted.
pub fn count_params(params: &ConfidenceModelParams) -> usize {
    params
        .layers
        .iter()
        .flat_map(|l| l.directions())
        .map(LstmWeights::len)
        .sum()
}

/// Glorot-uniform gate matrices, zero biases with forget bias 1.
pub fn init_model(config: &ConfNetConfig) -> Result<ConfidenceModelParams> {
    config.validate()?;
    let mut params = ConfidenceModelParams::zeros(config);
    let mut rng = stream_rng(config.seed, 0x1417);
    for dir in params.layers.iter_mut().flat_map(|l| l.directions_mut()) {
        let fan_in = dir.input_dim + dir.units;
        let fan_out = 4 * dir.units;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        dir.w.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
        let h = dir.units;
        dir.b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    }
    params.quantize();
    Ok(params)
}
