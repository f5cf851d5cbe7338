//! Full forecasting model: wavelet convolution, channel attention, LSTM,
//! linear head, in that order, plus model-file serialization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionCache, ChannelAttention};
use crate::data::FeatureScaler;
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmSequenceCache};
use crate::optim::AdamConfig;
use crate::tensor::{Parameter, Tensor};
use crate::wavelet::WaveletFilterBank;
use crate::wtconv::{WtConv1d, WtConvCache};

/// Number of input features per bar: open, high, low, close, volume.
pub const FEATURES: usize = 5;

/// Everything needed to rebuild a model and rerun an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Lookback window length L.
    pub window: usize,
    /// LSTM hidden size.
    pub hidden: usize,
    /// Wavelet bank name (built in: haar, db2, db4; others via a bank table).
    pub wavelet: String,
    pub wavelet_levels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Ablation switches; with both off the model is a plain LSTM.
    pub use_wtconv: bool,
    pub use_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 32,
            hidden: 64,
            wavelet: "haar".into(),
            wavelet_levels: 1,
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::default(),
            lr_decay_every: 50,
            lr_decay_factor: 0.5,
            use_wtconv: true,
            use_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || self.hidden == 0
            || self.wavelet_levels == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::Contract(format!(
                "model config fields must be positive: {self:?}"
            )));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::Contract("lr_decay_factor must be > 0".into()));
        }
        self.adam.validate()
    }

    /// Label for report rows, derived from the ablation switches.
    pub fn algorithm_label(&self) -> String {
        match (self.use_wtconv, self.use_attention) {
            (true, true) => "wtconv-attention-lstm".into(),
            (true, false) => "wtconv-lstm".into(),
            (false, true) => "attention-lstm".into(),
            (false, false) => "lstm".into(),
        }
    }
}

/// Linear output head `y = H_T W + b`.
#[derive(Debug, Clone)]
pub struct LinearHead {
    /// `[hidden, 1]`
    pub w: Parameter,
    /// `[1]`
    pub b: Parameter,
    hidden: usize,
}

pub struct HeadCache {
    input: Tensor,
}

impl LinearHead {
    pub fn new<R: rand::Rng>(hidden: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (hidden + 1) as f64).sqrt();
        Self {
            w: Parameter::new("head.w", Tensor::uniform(vec![hidden, 1], bound, rng)),
            b: Parameter::new("head.b", Tensor::zeros(vec![1])),
            hidden,
        }
    }

    /// `[batch, hidden] -> [batch, 1]`
    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, HeadCache)> {
        let shape = h.shape();
        if shape.len() != 2 || shape[1] != self.hidden {
            return Err(Error::Contract(format!(
                "head expects [batch, {}], got {shape:?}",
                self.hidden
            )));
        }
        let batch = shape[0];
        let mut out = Tensor::zeros(vec![batch, 1]);
        for b in 0..batch {
            let row = &h.data()[b * self.hidden..(b + 1) * self.hidden];
            let mut y = self.b.value.data()[0];
            for (hv, wv) in row.iter().zip(self.w.value.data()) {
                y += hv * wv;
            }
            out.data_mut()[b] = y;
        }
        Ok((out, HeadCache { input: h.clone() }))
    }

    pub fn backward(&mut self, cache: &HeadCache, dy: &Tensor) -> Result<Tensor> {
        let batch = cache.input.shape()[0];
        if dy.shape() != [batch, 1] {
            return Err(Error::Contract(format!(
                "head backward cotangent shape {:?}, want [{batch}, 1]",
                dy.shape()
            )));
        }
        let w = self.w.value.data().to_vec();
        let mut dh = Tensor::zeros(vec![batch, self.hidden]);
        for b in 0..batch {
            let g = dy.data()[b];
            self.b.grad_mut().data_mut()[0] += g;
            let row = &cache.input.data()[b * self.hidden..(b + 1) * self.hidden];
            for k in 0..self.hidden {
                self.w.grad_mut().data_mut()[k] += g * row[k];
                dh.data_mut()[b * self.hidden + k] = g * w[k];
            }
        }
        Ok(dh)
    }
}

/// The composed predictor.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub wtconv: WtConv1d,
    pub attention: ChannelAttention,
    pub lstm: Lstm,
    pub head: LinearHead,
}

pub struct ModelCache {
    wtconv: Option<WtConvCache>,
    attention: Option<AttentionCache>,
    lstm: LstmSequenceCache,
    head: HeadCache,
}

impl Model {
    /// Deterministically initialize all stages from `seed`.
    pub fn new(config: &ModelConfig, bank: WaveletFilterBank, seed: u64) -> Result<Self> {
        config.validate()?;
        if bank.max_levels(config.window) < config.wavelet_levels {
            return Err(Error::Contract(format!(
                "window {} cannot host {} '{}' levels",
                config.window, config.wavelet_levels, bank.name
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            wtconv: WtConv1d::new(FEATURES, bank, config.wavelet_levels, &mut rng),
            attention: ChannelAttention::new(FEATURES, &mut rng),
            lstm: Lstm::new(FEATURES, config.hidden, &mut rng),
            head: LinearHead::new(config.hidden, &mut rng),
        })
    }

    /// `[batch, 5, L] -> [batch, 1]` next-step prediction (in scaled units).
    pub fn forward(&self, window: &Tensor) -> Result<(Tensor, ModelCache)> {
        let shape = window.shape();
        if shape.len() != 3 || shape[1] != FEATURES {
            return Err(Error::Contract(format!(
                "model expects [batch, {FEATURES}, length], got {shape:?}"
            )));
        }

        let mut wt_out = None;
        let wt_cache = if self.config.use_wtconv {
            let (y, cache) = self.wtconv.forward(window)?;
            wt_out = Some(y);
            Some(cache)
        } else {
            None
        };
        let after_wt = wt_out.as_ref().unwrap_or(window);

        let mut at_out = None;
        let at_cache = if self.config.use_attention {
            let (out, cache) = self.attention.forward(after_wt)?;
            at_out = Some(out.y);
            Some(cache)
        } else {
            None
        };
        let after_at = at_out.as_ref().unwrap_or(after_wt);

        let (h_final, lstm_cache) = self.lstm.forward_sequence(after_at)?;
        let (pred, head_cache) = self.head.forward(&h_final)?;
        Ok((
            pred,
            ModelCache {
                wtconv: wt_cache,
                attention: at_cache,
                lstm: lstm_cache,
                head: head_cache,
            },
        ))
    }

    /// Backward from the prediction cotangent; accumulates every parameter
    /// gradient and returns the input cotangent.
    pub fn backward(&mut self, cache: &ModelCache, dpred: &Tensor) -> Result<Tensor> {
        let dh = self.head.backward(&cache.head, dpred)?;
        let mut dx = self.lstm.backward_sequence(&cache.lstm, &dh)?;
        if let Some(at_cache) = &cache.attention {
            dx = self.attention.backward(at_cache, &dx)?;
        }
        if let Some(wt_cache) = &cache.wtconv {
            dx = self.wtconv.backward(wt_cache, &dx)?;
        }
        Ok(dx)
    }

    /// All trainable parameters in a stable order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut params = vec![&mut self.wtconv.kernels, &mut self.wtconv.gamma];
        params.extend([
            &mut self.attention.w1,
            &mut self.attention.b1,
            &mut self.attention.w2,
            &mut self.attention.b2,
            &mut self.attention.ln_gain,
            &mut self.attention.ln_bias,
        ]);
        params.extend(self.lstm.parameters_mut());
        params.extend([&mut self.head.w, &mut self.head.b]);
        params
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut params = vec![&self.wtconv.kernels, &self.wtconv.gamma];
        params.extend([
            &self.attention.w1,
            &self.attention.b1,
            &self.attention.w2,
            &self.attention.b2,
            &self.attention.ln_gain,
            &self.attention.ln_bias,
        ]);
        params.extend(self.lstm.parameters());
        params.extend([&self.head.w, &self.head.b]);
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk model format: self-describing JSON with shapes, flat value
/// arrays, the filter bank, the feature scaler, and a config echo.
#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub ticker: String,
    pub config: ModelConfig,
    pub bank: WaveletFilterBank,
    pub scaler: FeatureScaler,
    tensors: Vec<NamedTensor>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl ModelFile {
    pub fn from_model(model: &Model, ticker: &str, scaler: &FeatureScaler) -> Self {
        let tensors = model
            .parameters()
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            ticker: ticker.to_string(),
            config: model.config.clone(),
            bank: model.wtconv.bank.clone(),
            scaler: scaler.clone(),
            tensors,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "model file format {} not supported (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = Model::new(&self.config, self.bank.clone(), 0)?;
        for p in model.parameters_mut() {
            let stored = self
                .tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| Error::Data(format!("model file lacks tensor '{}'", p.name)))?;
            if stored.shape != p.value.shape() {
                return Err(Error::Data(format!(
                    "tensor '{}' has shape {:?} on disk but {:?} in the model",
                    p.name,
                    stored.shape,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&stored.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        crate::report::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}
