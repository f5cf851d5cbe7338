//! Wavelet-transform convolution layer.
//!
//! Decomposes each channel with the DWT, applies a learnable depthwise
//! kernel to every band, scales each band by a learnable gamma, and
//! reconstructs with the inverse transform. Shape is preserved.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};
use crate::wavelet::{dwt1, dwt1_vjp, idwt1, idwt1_vjp, level_input_lengths, WaveletFilterBank};

pub const KERNEL_SIZE: usize = 3;

/// Depthwise per-band convolution in wavelet space.
#[derive(Debug, Clone)]
pub struct WtConv1d {
    /// One kernel per channel per band: `[channels, bands, KERNEL_SIZE]`.
    pub kernels: Parameter,
    /// One learnable scale per band: `[bands]`.
    pub gamma: Parameter,
    pub bank: WaveletFilterBank,
    pub levels: usize,
    channels: usize,
}

/// Intermediates kept for the backward pass.
pub struct WtConvCache {
    input_shape: Vec<usize>,
    /// Per (batch, channel): raw bands `[approx, d_deepest, ..., d_finest]`.
    bands: Vec<Vec<Vec<f64>>>,
    /// Per (batch, channel): convolution outputs before the gamma scale.
    convolved: Vec<Vec<Vec<f64>>>,
}

fn conv3_same(x: &[f64], k: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for t in 0..n {
        let mut s = k[1] * x[t];
        if t > 0 {
            s += k[0] * x[t - 1];
        }
        if t + 1 < n {
            s += k[2] * x[t + 1];
        }
        y[t] = s;
    }
    y
}

fn conv3_same_vjp_input(dy: &[f64], k: &[f64]) -> Vec<f64> {
    let n = dy.len();
    let mut dx = vec![0.0; n];
    for t in 0..n {
        let mut s = k[1] * dy[t];
        if t > 0 {
            s += k[2] * dy[t - 1];
        }
        if t + 1 < n {
            s += k[0] * dy[t + 1];
        }
        dx[t] = s;
    }
    dx
}

fn conv3_grad_kernel(dy: &[f64], x: &[f64], dk: &mut [f64]) {
    let n = x.len();
    for t in 0..n {
        let g = dy[t];
        if t > 0 {
            dk[0] += g * x[t - 1];
        }
        dk[1] += g * x[t];
        if t + 1 < n {
            dk[2] += g * x[t + 1];
        }
    }
}

impl WtConv1d {
    /// Number of bands a `levels`-deep decomposition produces.
    pub fn band_count(levels: usize) -> usize {
        levels + 1
    }

    pub fn new<R: Rng>(
        channels: usize,
        bank: WaveletFilterBank,
        levels: usize,
        rng: &mut R,
    ) -> Self {
        let bands = Self::band_count(levels);
        let bound = (6.0 / (2 * KERNEL_SIZE) as f64).sqrt();
        let kernels = Parameter::new(
            "wtconv.kernels",
            Tensor::uniform(vec![channels, bands, KERNEL_SIZE], bound, rng),
        );
        // Gamma starts at 1 so the layer begins near a pure filter.
        let gamma = Parameter::new("wtconv.gamma", Tensor::filled(vec![bands], 1.0));
        Self {
            kernels,
            gamma,
            bank,
            levels,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::Contract(format!(
                "wtconv expects [batch, {}, length], got {shape:?}",
                self.channels
            )));
        }
        let (batch, channels, length) = (shape[0], shape[1], shape[2]);
        if length < self.bank.filter_len() {
            return Err(Error::Contract(format!(
                "window length {length} shorter than the '{}' filter",
                self.bank.name
            )));
        }
        let max = self.bank.max_levels(length);
        if self.levels == 0 || self.levels > max {
            return Err(Error::Contract(format!(
                "{} wavelet levels too deep for length {length} (max {max})",
                self.levels
            )));
        }
        Ok((batch, channels, length))
    }

    /// Per-stage band length for an input of `length` samples.
    fn band_lengths(&self, length: usize) -> (Vec<usize>, Vec<usize>) {
        let lengths = level_input_lengths(length, self.levels);
        let blen: Vec<usize> = lengths.iter().map(|&l| (l + l % 2) / 2).collect();
        (lengths, blen)
    }

    fn decompose(&self, row: &[f64]) -> Vec<Vec<f64>> {
        let mut current = row.to_vec();
        let mut details = Vec::with_capacity(self.levels);
        for _ in 0..self.levels {
            if current.len() % 2 == 1 {
                current.push(0.0);
            }
            let (a, d) = dwt1(&current, &self.bank.dec_lo, &self.bank.dec_hi);
            details.push(d);
            current = a;
        }
        let mut bands = Vec::with_capacity(self.levels + 1);
        bands.push(current);
        details.reverse(); // deepest detail first
        bands.extend(details);
        bands
    }

    fn reconstruct(&self, bands: &[Vec<f64>], lengths: &[usize]) -> Vec<f64> {
        let mut current = bands[0].clone();
        for stage in (0..self.levels).rev() {
            let d = &bands[1 + (self.levels - 1 - stage)];
            let mut rebuilt = idwt1(&current, d, &self.bank.rec_lo, &self.bank.rec_hi);
            rebuilt.truncate(lengths[stage]);
            current = rebuilt;
        }
        current
    }

    /// Forward pass over a `[batch, channels, length]` tensor; shape preserved.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, WtConvCache)> {
        let (batch, channels, length) = self.check_input(x)?;
        let (lengths, _) = self.band_lengths(length);
        let bands_per_row = self.levels + 1;

        let mut out = Tensor::zeros(vec![batch, channels, length]);
        let mut cache = WtConvCache {
            input_shape: x.shape().to_vec(),
            bands: Vec::with_capacity(batch * channels),
            convolved: Vec::with_capacity(batch * channels),
        };

        for b in 0..batch {
            for ch in 0..channels {
                let start = (b * channels + ch) * length;
                let row = &x.data()[start..start + length];
                let bands = self.decompose(row);
                debug_assert_eq!(bands.len(), bands_per_row);

                let mut convolved = Vec::with_capacity(bands_per_row);
                let mut scaled = Vec::with_capacity(bands_per_row);
                for (band_idx, band) in bands.iter().enumerate() {
                    let k_off = (ch * bands_per_row + band_idx) * KERNEL_SIZE;
                    let k = &self.kernels.value.data()[k_off..k_off + KERNEL_SIZE];
                    let conv = conv3_same(band, k);
                    let g = self.gamma.value.data()[band_idx];
                    scaled.push(conv.iter().map(|v| g * v).collect::<Vec<f64>>());
                    convolved.push(conv);
                }

                let rebuilt = self.reconstruct(&scaled, &lengths);
                out.data_mut()[start..start + length].copy_from_slice(&rebuilt);
                cache.bands.push(bands);
                cache.convolved.push(convolved);
            }
        }
        Ok((out, cache))
    }

    /// Backward pass: accumulates kernel and gamma gradients, returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, cache: &WtConvCache, dy: &Tensor) -> Result<Tensor> {
        if dy.shape() != cache.input_shape.as_slice() {
            return Err(Error::Contract(format!(
                "wtconv backward cotangent shape {:?} does not match input {:?}",
                dy.shape(),
                cache.input_shape
            )));
        }
        let (batch, channels, length) = (
            cache.input_shape[0],
            cache.input_shape[1],
            cache.input_shape[2],
        );
        let (lengths, blen) = self.band_lengths(length);
        let bands_per_row = self.levels + 1;

        let kernel_values = self.kernels.value.data().to_vec();
        let gamma_values = self.gamma.value.data().to_vec();
        let mut dkernels = vec![0.0; kernel_values.len()];
        let mut dgamma = vec![0.0; gamma_values.len()];
        let mut dx = Tensor::zeros(cache.input_shape.clone());

        for b in 0..batch {
            for ch in 0..channels {
                let row_idx = b * channels + ch;
                let start = row_idx * length;
                let dout = &dy.data()[start..start + length];

                // Reconstruction vjp: output cotangent -> scaled-band cotangents.
                let mut dscaled: Vec<Vec<f64>> = vec![Vec::new(); bands_per_row];
                let mut dcur = dout.to_vec();
                for stage in 0..self.levels {
                    dcur.resize(2 * blen[stage], 0.0);
                    let (da, dd) = idwt1_vjp(&dcur, &self.bank.rec_lo, &self.bank.rec_hi);
                    dscaled[1 + (self.levels - 1 - stage)] = dd;
                    dcur = da;
                }
                dscaled[0] = dcur;

                // Band-wise kernel/gamma/band gradients.
                let mut dbands: Vec<Vec<f64>> = Vec::with_capacity(bands_per_row);
                for band_idx in 0..bands_per_row {
                    let g = gamma_values[band_idx];
                    let conv = &cache.convolved[row_idx][band_idx];
                    let band = &cache.bands[row_idx][band_idx];
                    let ds = &dscaled[band_idx];

                    dgamma[band_idx] += ds.iter().zip(conv).map(|(a, b)| a * b).sum::<f64>();
                    let dconv: Vec<f64> = ds.iter().map(|v| g * v).collect();

                    let k_off = (ch * bands_per_row + band_idx) * KERNEL_SIZE;
                    let k = &kernel_values[k_off..k_off + KERNEL_SIZE];
                    conv3_grad_kernel(&dconv, band, &mut dkernels[k_off..k_off + KERNEL_SIZE]);
                    dbands.push(conv3_same_vjp_input(&dconv, k));
                }

                // Decomposition vjp: band cotangents -> input cotangent.
                let mut da = dbands[0].clone();
                for stage in (0..self.levels).rev() {
                    let dd = &dbands[1 + (self.levels - 1 - stage)];
                    let mut dpadded = dwt1_vjp(&da, dd, &self.bank.dec_lo, &self.bank.dec_hi);
                    dpadded.truncate(lengths[stage]);
                    da = dpadded;
                }
                dx.data_mut()[start..start + length].copy_from_slice(&da);
            }
        }

        for (g, d) in self.kernels.grad_mut().data_mut().iter_mut().zip(&dkernels) {
            *g += d;
        }
        for (g, d) in self.gamma.grad_mut().data_mut().iter_mut().zip(&dgamma) {
            *g += d;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_input(batch: usize, channels: usize, length: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(vec![batch, channels, length], 2.0, &mut rng)
    }

    #[test]
    fn zero_gamma_zeroes_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = WaveletFilterBank::builtin("haar").unwrap();
        let mut layer = WtConv1d::new(3, bank, 2, &mut rng);
        layer.gamma.value.fill(0.0);
        let x = sample_input(2, 3, 16, 2);
        let (y, _) = layer.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_recovers_the_input() {
        // [DERIVED] unit-impulse kernels with gamma 1 make the layer a pure
        // round trip, so the output equals the input.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for name in ["haar", "db2"] {
            let bank = WaveletFilterBank::builtin(name).unwrap();
            let mut layer = WtConv1d::new(2, bank, 2, &mut rng);
            layer.kernels.value.fill(0.0);
            let bands = WtConv1d::band_count(2);
            for ch in 0..2 {
                for band in 0..bands {
                    let off = (ch * bands + band) * KERNEL_SIZE;
                    layer.kernels.value.data_mut()[off + 1] = 1.0;
                }
            }
            let x = sample_input(2, 2, 32, 5);
            let (y, _) = layer.forward(&x).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!((a - b).abs() < 1e-8, "{name}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_is_preserved_and_odd_lengths_work() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bank = WaveletFilterBank::builtin("haar").unwrap();
        let layer = WtConv1d::new(2, bank, 2, &mut rng);
        let x = sample_input(3, 2, 15, 7);
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2, 15]);
    }

    #[test]
    fn rejects_incompatible_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = WaveletFilterBank::builtin("db4").unwrap();
        let layer = WtConv1d::new(2, bank, 1, &mut rng);
        // wrong channel count
        assert!(layer.forward(&sample_input(1, 3, 32, 9)).is_err());
        // shorter than the filter
        assert!(layer.forward(&sample_input(1, 2, 4, 9)).is_err());
    }

    fn run_gradcheck(bank_name: &str, levels: usize, length: usize, seed: u64) -> f64 {
        let channels = 2;
        let batch = 2;
        let bank = WaveletFilterBank::builtin(bank_name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = WtConv1d::new(channels, bank.clone(), levels, &mut rng);
        let x = sample_input(batch, channels, length, seed + 100);
        let cotangent = Tensor::uniform(vec![batch, channels, length], 1.0, &mut rng);

        let n_k = layer.kernels.len();
        let n_g = layer.gamma.len();
        let mut point = Vec::new();
        point.extend_from_slice(layer.kernels.value.data());
        point.extend_from_slice(layer.gamma.value.data());
        point.extend_from_slice(x.data());

        let rebuild = |p: &[f64]| {
            let mut l = layer.clone();
            l.kernels.value.data_mut().copy_from_slice(&p[..n_k]);
            l.gamma.value.data_mut().copy_from_slice(&p[n_k..n_k + n_g]);
            let xt = Tensor::new(vec![batch, channels, length], p[n_k + n_g..].to_vec()).unwrap();
            (l, xt)
        };

        let f = |p: &[f64]| {
            let (l, xt) = rebuild(p);
            let (y, _) = l.forward(&xt)?;
            Ok(y.data().iter().zip(cotangent.data()).map(|(a, b)| a * b).sum())
        };

        let (mut l, xt) = rebuild(&point);
        let (_, cache) = l.forward(&xt).unwrap();
        let dx = l.backward(&cache, &cotangent).unwrap();
        let mut analytic = Vec::new();
        analytic.extend_from_slice(l.kernels.grad().data());
        analytic.extend_from_slice(l.gamma.grad().data());
        analytic.extend_from_slice(dx.data());

        finite_diff_check(f, &point, &analytic, 1e-5).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (bank, levels, length, seed) in
            [("haar", 1, 16, 1u64), ("haar", 2, 15, 2), ("db2", 2, 20, 3)]
        {
            let err = run_gradcheck(bank, levels, length, seed);
            assert!(err <= 1e-4, "{bank} L={length}: gradient error {err}");
        }
    }
}
