//! DCT-coefficient channel attention.
//!
//! Per channel the input is transformed with the DCT, layer-normalized over
//! the time axis, mean-pooled, and pushed through a two-layer bottleneck
//! (C -> 2C -> C) ending in a sigmoid. The resulting per-channel weights in
//! (0, 1) gate the input multiplicatively.

use rand::Rng;

use crate::dct::{dct_ii, dct_ii_adjoint};
use crate::error::{Error, Result};
use crate::tensor::{matvec_acc, matvec_acc_t, outer_acc, Parameter, Tensor};

pub const LN_EPSILON: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalize each `(sample, channel)` row of a `[batch, C, L]` tensor to zero
/// mean and unit variance over `L`, then apply the per-channel affine.
///
/// Population variance with `LN_EPSILON` in the denominator, so constant rows
/// normalize to zero rather than dividing by zero.
pub fn layer_norm(f: &Tensor, gain: &[f64], bias: &[f64]) -> Result<Tensor> {
    let (out, _, _) = layer_norm_cached(f, gain, bias)?;
    Ok(out)
}

/// As [`layer_norm`], also returning the normalized rows and the reciprocal
/// standard deviations needed by the backward pass.
fn layer_norm_cached(f: &Tensor, gain: &[f64], bias: &[f64]) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let shape = f.shape();
    if shape.len() != 3 {
        return Err(Error::Contract(format!(
            "layer_norm expects [batch, channels, length], got {shape:?}"
        )));
    }
    let (batch, channels, length) = (shape[0], shape[1], shape[2]);
    if gain.len() != channels || bias.len() != channels {
        return Err(Error::Contract(format!(
            "layer_norm affine length {} does not match {channels} channels",
            gain.len()
        )));
    }
    let inv_len = 1.0 / length as f64;
    let mut out = Tensor::zeros(shape.to_vec());
    let mut normed = Tensor::zeros(shape.to_vec());
    let mut inv_std = vec![0.0; batch * channels];
    for b in 0..batch {
        for c in 0..channels {
            let start = (b * channels + c) * length;
            let row = &f.data()[start..start + length];
            let mean = row.iter().sum::<f64>() * inv_len;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_len;
            let r = 1.0 / (var + LN_EPSILON).sqrt();
            inv_std[b * channels + c] = r;
            for (i, &v) in row.iter().enumerate() {
                let n = (v - mean) * r;
                normed.data_mut()[start + i] = n;
                out.data_mut()[start + i] = gain[c] * n + bias[c];
            }
        }
    }
    Ok((out, normed, inv_std))
}

/// Gated features plus the gate values themselves.
pub struct AttentionOutput {
    /// `X` with each channel scaled by its weight: `[batch, C, L]`.
    pub y: Tensor,
    /// Per-(sample, channel) sigmoid weights, each strictly in (0, 1): `[batch, C]`.
    pub weights: Tensor,
}

/// Intermediates for the backward pass.
pub struct AttentionCache {
    x: Tensor,
    normed: Tensor,
    inv_std: Vec<f64>,
    hidden_pre: Tensor,
    hidden: Tensor,
    weights: Tensor,
}

/// Channel attention block with learnable layer-norm affine and bottleneck.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    /// `[C, 2C]`
    pub w1: Parameter,
    /// `[2C]`
    pub b1: Parameter,
    /// `[2C, C]`
    pub w2: Parameter,
    /// `[C]`
    pub b2: Parameter,
    /// `[C]`
    pub ln_gain: Parameter,
    /// `[C]`
    pub ln_bias: Parameter,
    channels: usize,
}

impl ChannelAttention {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let expanded = 2 * channels;
        let bound1 = (6.0 / (channels + expanded) as f64).sqrt();
        let bound2 = (6.0 / (expanded + channels) as f64).sqrt();
        Self {
            w1: Parameter::new(
                "attention.w1",
                Tensor::uniform(vec![channels, expanded], bound1, rng),
            ),
            b1: Parameter::new("attention.b1", Tensor::zeros(vec![expanded])),
            w2: Parameter::new(
                "attention.w2",
                Tensor::uniform(vec![expanded, channels], bound2, rng),
            ),
            b2: Parameter::new("attention.b2", Tensor::zeros(vec![channels])),
            ln_gain: Parameter::new("attention.ln_gain", Tensor::filled(vec![channels], 1.0)),
            ln_bias: Parameter::new("attention.ln_bias", Tensor::zeros(vec![channels])),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Forward pass over `[batch, C, L]`.
    pub fn forward(&self, x: &Tensor) -> Result<(AttentionOutput, AttentionCache)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::Contract(format!(
                "channel attention expects [batch, {}, length], got {shape:?}",
                self.channels
            )));
        }
        let (batch, channels, length) = (shape[0], shape[1], shape[2]);
        if length == 0 {
            return Err(Error::Contract("channel attention needs length >= 1".into()));
        }
        let expanded = 2 * channels;

        // Per-channel DCT, stacked.
        let mut spectra = Tensor::zeros(shape.to_vec());
        for b in 0..batch {
            for c in 0..channels {
                let start = (b * channels + c) * length;
                let spec = dct_ii(&x.data()[start..start + length]);
                spectra.data_mut()[start..start + length].copy_from_slice(&spec);
            }
        }

        let (hat, normed, inv_std) =
            layer_norm_cached(&spectra, self.ln_gain.value.data(), self.ln_bias.value.data())?;

        // Mean-pool over the time axis, then the bottleneck.
        let inv_len = 1.0 / length as f64;
        let mut weights = Tensor::zeros(vec![batch, channels]);
        let mut hidden_pre = Tensor::zeros(vec![batch, expanded]);
        let mut hidden = Tensor::zeros(vec![batch, expanded]);
        for b in 0..batch {
            let mut pooled = vec![0.0; channels];
            for (c, p) in pooled.iter_mut().enumerate() {
                let start = (b * channels + c) * length;
                *p = hat.data()[start..start + length].iter().sum::<f64>() * inv_len;
            }
            let mut z1 = self.b1.value.data().to_vec();
            matvec_acc(&pooled, self.w1.value.data(), &mut z1);
            let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
            let mut z2 = self.b2.value.data().to_vec();
            matvec_acc(&a1, self.w2.value.data(), &mut z2);
            for c in 0..channels {
                weights.data_mut()[b * channels + c] = sigmoid(z2[c]);
            }
            hidden_pre.data_mut()[b * expanded..(b + 1) * expanded].copy_from_slice(&z1);
            hidden.data_mut()[b * expanded..(b + 1) * expanded].copy_from_slice(&a1);
        }

        // Gate the raw input.
        let mut y = Tensor::zeros(shape.to_vec());
        for b in 0..batch {
            for c in 0..channels {
                let w = weights.data()[b * channels + c];
                let start = (b * channels + c) * length;
                for i in 0..length {
                    y.data_mut()[start + i] = w * x.data()[start + i];
                }
            }
        }

        Ok((
            AttentionOutput {
                y,
                weights: weights.clone(),
            },
            AttentionCache {
                x: x.clone(),
                normed,
                inv_std,
                hidden_pre,
                hidden,
                weights,
            },
        ))
    }

    /// Backward pass: accumulates parameter gradients, returns `dL/dX`.
    pub fn backward(&mut self, cache: &AttentionCache, dy: &Tensor) -> Result<Tensor> {
        if !dy.same_shape(&cache.x) {
            return Err(Error::Contract(format!(
                "attention backward cotangent shape {:?} does not match input {:?}",
                dy.shape(),
                cache.x.shape()
            )));
        }
        let shape = cache.x.shape();
        let (batch, channels, length) = (shape[0], shape[1], shape[2]);
        let expanded = 2 * channels;
        let inv_len = 1.0 / length as f64;

        let w1 = self.w1.value.data().to_vec();
        let w2 = self.w2.value.data().to_vec();
        let ln_gain = self.ln_gain.value.data().to_vec();

        let mut dw1 = vec![0.0; w1.len()];
        let mut db1 = vec![0.0; expanded];
        let mut dw2 = vec![0.0; w2.len()];
        let mut db2 = vec![0.0; channels];
        let mut dgain = vec![0.0; channels];
        let mut dbias = vec![0.0; channels];
        let mut dx = Tensor::zeros(shape.to_vec());

        for b in 0..batch {
            // Direct gating path and the cotangent of the weights.
            let mut dweights = vec![0.0; channels];
            for c in 0..channels {
                let start = (b * channels + c) * length;
                let w = cache.weights.data()[b * channels + c];
                let mut dw_acc = 0.0;
                for i in 0..length {
                    let g = dy.data()[start + i];
                    dx.data_mut()[start + i] += w * g;
                    dw_acc += cache.x.data()[start + i] * g;
                }
                dweights[c] = dw_acc;
            }

            // Sigmoid and second linear layer.
            let mut dz2 = vec![0.0; channels];
            for c in 0..channels {
                let w = cache.weights.data()[b * channels + c];
                dz2[c] = dweights[c] * w * (1.0 - w);
            }
            let a1 = &cache.hidden.data()[b * expanded..(b + 1) * expanded];
            for (g, &d) in db2.iter_mut().zip(&dz2) {
                *g += d;
            }
            outer_acc(a1, &dz2, &mut dw2);
            let mut da1 = vec![0.0; expanded];
            matvec_acc_t(&dz2, &w2, &mut da1);

            // ReLU and first linear layer.
            let z1 = &cache.hidden_pre.data()[b * expanded..(b + 1) * expanded];
            let dz1: Vec<f64> = da1
                .iter()
                .zip(z1)
                .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
                .collect();
            for (g, &d) in db1.iter_mut().zip(&dz1) {
                *g += d;
            }
            let mut pooled = vec![0.0; channels];
            for (c, p) in pooled.iter_mut().enumerate() {
                let start = (b * channels + c) * length;
                let normed = &cache.normed.data()[start..start + length];
                let gain = ln_gain[c];
                let bias = self.ln_bias.value.data()[c];
                *p = normed.iter().map(|&n| gain * n + bias).sum::<f64>() * inv_len;
            }
            outer_acc(&pooled, &dz1, &mut dw1);
            let mut ds = vec![0.0; channels];
            matvec_acc_t(&dz1, &w1, &mut ds);

            // Pooling, layer norm, and the DCT adjoint back onto the input.
            for c in 0..channels {
                let start = (b * channels + c) * length;
                let dhat = ds[c] * inv_len; // broadcast over the row
                let normed = &cache.normed.data()[start..start + length];
                let r = cache.inv_std[b * channels + c];

                dgain[c] += dhat * normed.iter().sum::<f64>();
                dbias[c] += dhat * length as f64;

                // dF = r * (dxhat - mean(dxhat) - normed * mean(dxhat .* normed))
                // with dxhat constant over the row.
                let dxhat = dhat * ln_gain[c];
                let mean_dxhat = dxhat;
                let mean_dxhat_n = dxhat * normed.iter().sum::<f64>() * inv_len;
                let dspec: Vec<f64> = normed
                    .iter()
                    .map(|&n| r * (dxhat - mean_dxhat - n * mean_dxhat_n))
                    .collect();
                let dxrow = dct_ii_adjoint(&dspec);
                for (i, v) in dxrow.into_iter().enumerate() {
                    dx.data_mut()[start + i] += v;
                }
            }
        }

        let add = |param: &mut Parameter, grads: &[f64]| {
            for (g, d) in param.grad_mut().data_mut().iter_mut().zip(grads) {
                *g += d;
            }
        };
        add(&mut self.w1, &dw1);
        add(&mut self.b1, &db1);
        add(&mut self.w2, &dw2);
        add(&mut self.b2, &db2);
        add(&mut self.ln_gain, &dgain);
        add(&mut self.ln_bias, &dbias);
        Ok(dx)
    }
}
