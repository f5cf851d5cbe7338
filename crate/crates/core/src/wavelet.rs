//! Filter-bank discrete wavelet transform and its inverse.
//!
//! The transform is periodized (circular convolution) so that orthonormal
//! banks form an exactly orthogonal map: round trips reconstruct to machine
//! precision and signal energy equals coefficient energy. Odd lengths are
//! zero-padded on the right by one sample per level, which preserves both
//! properties, and the original length is recorded for exact-length
//! inversion.
//!
//! Convention: analysis correlates taps against the signal,
//! `a[i] = sum_j dec_lo[j] * x[(2i + j) mod n]`, so the Haar bands are
//! `a_k = (x_{2k} + x_{2k+1})/sqrt(2)` and `d_k = (x_{2k} - x_{2k+1})/sqrt(2)`
//! with high-pass taps `(1/sqrt(2), -1/sqrt(2))`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Decomposition and reconstruction filter taps for one wavelet family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilterBank {
    pub name: String,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl WaveletFilterBank {
    /// Orthonormal bank from its low-pass taps; high-pass follows from the
    /// quadrature-mirror relation `hi[j] = (-1)^j lo[f-1-j]`.
    pub fn orthonormal(name: &str, dec_lo: Vec<f64>) -> Self {
        let f = dec_lo.len();
        let dec_hi: Vec<f64> = (0..f)
            .map(|j| if j % 2 == 0 { dec_lo[f - 1 - j] } else { -dec_lo[f - 1 - j] })
            .collect();
        Self {
            name: name.to_string(),
            rec_lo: dec_lo.clone(),
            rec_hi: dec_hi.clone(),
            dec_lo,
            dec_hi,
        }
    }

    /// Look up one of the built-in banks: `haar`, `db2`, `db4`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "haar" | "db1" => Ok(Self::orthonormal("haar", vec![SQRT_HALF, SQRT_HALF])),
            "db2" => Ok(Self::orthonormal(
                "db2",
                vec![
                    0.4829629131445341,
                    0.8365163037378077,
                    0.2241438680420134,
                    -0.12940952255126034,
                ],
            )),
            "db4" => Ok(Self::orthonormal(
                "db4",
                vec![
                    0.23037781330885523,
                    0.7148465705525415,
                    0.6308807679295904,
                    -0.02798376941698385,
                    -0.18703481171888114,
                    0.030841381835986965,
                    0.032883011666982945,
                    -0.010597401784997278,
                ],
            )),
            other => Err(Error::Contract(format!(
                "unknown wavelet bank '{other}' (built in: haar, db2, db4)"
            ))),
        }
    }

    pub fn filter_len(&self) -> usize {
        self.dec_lo.len()
    }

    /// True when the taps form an orthonormal pair and reconstruction reuses them.
    pub fn is_orthonormal(&self) -> bool {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        (sq(&self.dec_lo) - 1.0).abs() < 1e-10
            && (sq(&self.dec_hi) - 1.0).abs() < 1e-10
            && self.rec_lo == self.dec_lo
            && self.rec_hi == self.dec_hi
    }

    /// Deepest decomposition supported for a signal of `length` samples.
    pub fn max_levels(&self, length: usize) -> usize {
        let f = self.filter_len();
        if length < f {
            return 0;
        }
        ((length / f) as f64).log2().floor() as usize + 1
    }

    fn validate_taps(&self) -> Result<()> {
        for (label, taps) in [
            ("dec_lo", &self.dec_lo),
            ("dec_hi", &self.dec_hi),
            ("rec_lo", &self.rec_lo),
            ("rec_hi", &self.rec_hi),
        ] {
            if taps.len() < 2 {
                return Err(Error::Data(format!(
                    "bank '{}': {label} needs at least 2 taps",
                    self.name
                )));
            }
            if taps.iter().any(|t| !t.is_finite()) {
                return Err(Error::Data(format!(
                    "bank '{}': {label} contains a non-finite tap",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Round-trip a probe signal and fail if the bank does not reconstruct.
    pub fn validate_reconstruction(&self) -> Result<()> {
        self.validate_taps()?;
        let n = 64.max(2 * self.filter_len());
        let probe: Vec<f64> = (0..n).map(|i| ((i * i + 3 * i) % 17) as f64 - 8.0).collect();
        let signal = Tensor::new(vec![1, n], probe.clone())?;
        let coeffs = dwt_forward(&signal, self, 1)?;
        let back = dwt_inverse(&coeffs, self)?;
        let err = probe
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if err > 1e-8 {
            return Err(Error::Data(format!(
                "bank '{}' fails perfect reconstruction (max error {err:.3e})",
                self.name
            )));
        }
        Ok(())
    }

    /// Parse banks from the plain-text table format:
    ///
    /// ```text
    /// # comments and blank lines are skipped
    /// bank mywavelet
    /// dec_lo 0.7071067811865476 0.7071067811865476
    /// dec_hi 0.7071067811865476 -0.7071067811865476
    /// rec_lo 0.7071067811865476 0.7071067811865476
    /// rec_hi 0.7071067811865476 -0.7071067811865476
    /// ```
    pub fn parse_table(text: &str) -> Result<Vec<Self>> {
        let mut banks: Vec<WaveletFilterBank> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            match key {
                "bank" => {
                    let name = parts.next().ok_or_else(|| {
                        Error::Data(format!("line {}: 'bank' without a name", lineno + 1))
                    })?;
                    banks.push(WaveletFilterBank {
                        name: name.to_string(),
                        dec_lo: vec![],
                        dec_hi: vec![],
                        rec_lo: vec![],
                        rec_hi: vec![],
                    });
                }
                "dec_lo" | "dec_hi" | "rec_lo" | "rec_hi" => {
                    let bank = banks.last_mut().ok_or_else(|| {
                        Error::Data(format!("line {}: '{key}' before any 'bank' line", lineno + 1))
                    })?;
                    let taps = parts
                        .map(|tok| {
                            tok.parse::<f64>().map_err(|_| {
                                Error::Data(format!(
                                    "line {}: '{tok}' is not a number",
                                    lineno + 1
                                ))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    match key {
                        "dec_lo" => bank.dec_lo = taps,
                        "dec_hi" => bank.dec_hi = taps,
                        "rec_lo" => bank.rec_lo = taps,
                        _ => bank.rec_hi = taps,
                    }
                }
                other => {
                    return Err(Error::Data(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )));
                }
            }
        }
        for bank in &banks {
            bank.validate_reconstruction()?;
        }
        Ok(banks)
    }

    /// Load and validate banks from a table file.
    pub fn load_table(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text)
    }

    /// Resolve `name` against built-ins, then against an optional table file.
    pub fn resolve(name: &str, table: Option<&Path>) -> Result<Self> {
        if let Ok(bank) = Self::builtin(name) {
            return Ok(bank);
        }
        if let Some(path) = table {
            let banks = Self::load_table(path)?;
            if let Some(bank) = banks.into_iter().find(|b| b.name == name) {
                return Ok(bank);
            }
        }
        Err(Error::Contract(format!(
            "unknown wavelet bank '{name}' (built in: haar, db2, db4)"
        )))
    }
}

/// Multi-level coefficient pyramid for a `[channels, length]` signal.
#[derive(Debug, Clone)]
pub struct WaveletCoeffs {
    pub levels: usize,
    /// Coarsest low band, `[channels, len]`.
    pub approx: Tensor,
    /// Detail bands ordered coarsest first: `details[0]` is the deepest level.
    pub details: Vec<Tensor>,
    /// Input length, for exact-length inversion.
    pub original_length: usize,
    pub bank_name: String,
}

impl WaveletCoeffs {
    pub fn channels(&self) -> usize {
        self.approx.shape()[0]
    }

    /// Total coefficient energy across all bands.
    pub fn energy(&self) -> f64 {
        let sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.approx) + self.details.iter().map(sq).sum::<f64>()
    }
}

/// Signal length entering each decomposition level (before per-level padding).
pub(crate) fn level_input_lengths(original: usize, levels: usize) -> Vec<usize> {
    let mut lengths = Vec::with_capacity(levels);
    let mut len = original;
    for _ in 0..levels {
        lengths.push(len);
        len = (len + len % 2) / 2;
    }
    lengths
}

/// Pad to even length with one trailing zero.
fn pad_even(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    if v.len() % 2 == 1 {
        v.push(0.0);
    }
    v
}

/// One analysis level: periodized correlation and downsampling by 2.
pub(crate) fn dwt1(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(x.len() % 2 == 0);
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        let mut sa = 0.0;
        let mut sd = 0.0;
        let base = 2 * i;
        for (j, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let xv = x[(base + j) % n];
            sa += l * xv;
            sd += h * xv;
        }
        a[i] = sa;
        d[i] = sd;
    }
    (a, d)
}

/// One synthesis level: upsample by 2 and spread the reconstruction taps.
pub(crate) fn idwt1(a: &[f64], d: &[f64], rec_lo: &[f64], rec_hi: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), d.len());
    let n = 2 * a.len();
    let mut out = vec![0.0; n];
    for i in 0..a.len() {
        let base = 2 * i;
        let (av, dv) = (a[i], d[i]);
        for (j, (&l, &h)) in rec_lo.iter().zip(rec_hi).enumerate() {
            out[(base + j) % n] += av * l + dv * h;
        }
    }
    out
}

/// Adjoint of [`dwt1`]: scatter band cotangents back onto the signal grid.
pub(crate) fn dwt1_vjp(da: &[f64], dd: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    // The analysis map is linear, so its vjp is synthesis with the same taps.
    idwt1(da, dd, lo, hi)
}

/// Adjoint of [`idwt1`]: gather signal cotangents into band cotangents.
pub(crate) fn idwt1_vjp(dx: &[f64], rec_lo: &[f64], rec_hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    dwt1(dx, rec_lo, rec_hi)
}

fn check_depth(bank: &WaveletFilterBank, length: usize, levels: usize) -> Result<()> {
    if length < bank.filter_len() {
        return Err(Error::Contract(format!(
            "signal of length {length} is shorter than the '{}' filter ({} taps)",
            bank.name,
            bank.filter_len()
        )));
    }
    let max = bank.max_levels(length);
    if levels == 0 || levels > max {
        return Err(Error::Contract(format!(
            "{levels} levels too deep for length {length} with bank '{}' (max {max})",
            bank.name
        )));
    }
    Ok(())
}

/// Multi-level forward transform of a `[channels, length]` signal.
pub fn dwt_forward(signal: &Tensor, bank: &WaveletFilterBank, levels: usize) -> Result<WaveletCoeffs> {
    let shape = signal.shape();
    if shape.len() != 2 {
        return Err(Error::Contract(format!(
            "dwt_forward expects [channels, length], got {shape:?}"
        )));
    }
    let (channels, length) = (shape[0], shape[1]);
    check_depth(bank, length, levels)?;

    let lengths = level_input_lengths(length, levels);
    // details_rows[level][channel]
    let mut detail_rows: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(channels); levels];
    let mut approx_rows: Vec<Vec<f64>> = Vec::with_capacity(channels);
    for ch in 0..channels {
        let mut current = signal.data()[ch * length..(ch + 1) * length].to_vec();
        for (level, rows) in detail_rows.iter_mut().enumerate() {
            debug_assert_eq!(current.len(), lengths[level]);
            let padded = pad_even(&current);
            let (a, d) = dwt1(&padded, &bank.dec_lo, &bank.dec_hi);
            rows.push(d);
            current = a;
        }
        approx_rows.push(current);
    }

    let pack = |rows: Vec<Vec<f64>>| -> Tensor {
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(channels * cols);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Tensor::new(vec![channels, cols], data).expect("band rows are uniform")
    };

    // Coarsest first: details[0] is the deepest level.
    let mut details: Vec<Tensor> = detail_rows.into_iter().map(pack).collect();
    details.reverse();

    Ok(WaveletCoeffs {
        levels,
        approx: pack(approx_rows),
        details,
        original_length: length,
        bank_name: bank.name.clone(),
    })
}

/// Multi-level inverse transform back to `[channels, original_length]`.
pub fn dwt_inverse(coeffs: &WaveletCoeffs, bank: &WaveletFilterBank) -> Result<Tensor> {
    if coeffs.bank_name != bank.name {
        return Err(Error::Contract(format!(
            "coefficients were produced by bank '{}' but inversion uses '{}'",
            coeffs.bank_name, bank.name
        )));
    }
    if coeffs.details.len() != coeffs.levels {
        return Err(Error::Contract(format!(
            "coefficient pyramid holds {} detail bands for {} levels",
            coeffs.details.len(),
            coeffs.levels
        )));
    }
    let channels = coeffs.channels();
    let lengths = level_input_lengths(coeffs.original_length, coeffs.levels);

    let mut out = Tensor::zeros(vec![channels, coeffs.original_length]);
    for ch in 0..channels {
        let a_cols = coeffs.approx.shape()[1];
        let mut current = coeffs.approx.data()[ch * a_cols..(ch + 1) * a_cols].to_vec();
        // Walk from the deepest level back to the finest.
        for level in (0..coeffs.levels).rev() {
            let band = &coeffs.details[coeffs.levels - 1 - level];
            let cols = band.shape()[1];
            if cols != current.len() {
                return Err(Error::Contract(format!(
                    "detail band at level {} has {} coefficients, expected {}",
                    level + 1,
                    cols,
                    current.len()
                )));
            }
            let d = &band.data()[ch * cols..(ch + 1) * cols];
            let mut rebuilt = idwt1(&current, d, &bank.rec_lo, &bank.rec_hi);
            rebuilt.truncate(lengths[level]);
            current = rebuilt;
        }
        for (i, v) in current.into_iter().enumerate() {
            out.data_mut()[ch * coeffs.original_length + i] = v;
        }
    }
    Ok(out)
}
