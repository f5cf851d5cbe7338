//! OHLCV ingestion, chronological splitting, feature scaling, and sliding
//! window construction.
//!
//! CSV schema: `date,open,high,low,close,volume` with ISO-8601 dates.
//! Missing trading days are simply absent rows; missing fields are an error.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FEATURES;
use crate::tensor::Tensor;

/// One daily bar. Feature order everywhere: open, high, low, close, volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    pub fn features(&self) -> [f64; FEATURES] {
        [self.open, self.high, self.low, self.close, self.volume]
    }

    fn validate(&self, row: usize) -> Result<()> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Data(format!(
                    "row {row}: {name} price must be positive and finite, got {v}"
                )));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(Error::Data(format!(
                "row {row}: volume must be >= 0, got {}",
                self.volume
            )));
        }
        let body_low = self.open.min(self.close);
        let body_high = self.open.max(self.close);
        if self.low > body_low || body_high > self.high {
            return Err(Error::Data(format!(
                "row {row}: OHLC range violated (low {} open {} close {} high {})",
                self.low, self.open, self.close, self.high
            )));
        }
        Ok(())
    }
}

/// Dated bars for one ticker, strictly increasing in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeriesFrame {
    pub ticker: String,
    pub bars: Vec<OhlcvBar>,
}

impl TimeSeriesFrame {
    pub fn new(ticker: impl Into<String>, bars: Vec<OhlcvBar>) -> Result<Self> {
        let frame = Self {
            ticker: ticker.into(),
            bars,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    fn validate(&self) -> Result<()> {
        for (idx, bar) in self.bars.iter().enumerate() {
            bar.validate(idx + 2)?; // +2: one header line, 1-based rows
            if idx > 0 && bar.date <= self.bars[idx - 1].date {
                return Err(Error::Data(format!(
                    "row {}: date {} does not increase past {}",
                    idx + 2,
                    bar.date,
                    self.bars[idx - 1].date
                )));
            }
        }
        Ok(())
    }
}

/// Parse and validate one ticker CSV.
pub fn load_ohlcv_csv(path: &Path, ticker: &str) -> Result<TimeSeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("{}: missing column '{name}'", path.display())))
    };
    let cols = [
        col("date")?,
        col("open")?,
        col("high")?,
        col("low")?,
        col("close")?,
        col("volume")?,
    ];

    let mut bars = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data(format!("{}: row {row}: {e}", path.display())))?;
        let field = |c: usize| -> Result<&str> {
            record
                .get(cols[c])
                .ok_or_else(|| Error::Data(format!("{}: row {row}: short record", path.display())))
        };
        let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d").map_err(|_| {
            Error::Data(format!(
                "{}: row {row}: '{}' is not an ISO-8601 date",
                path.display(),
                record.get(cols[0]).unwrap_or("")
            ))
        })?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c)?;
            raw.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row}: {name} '{raw}' is not numeric",
                    path.display()
                ))
            })
        };
        bars.push(OhlcvBar {
            date,
            open: num(1, "open")?,
            high: num(2, "high")?,
            low: num(3, "low")?,
            close: num(4, "close")?,
            volume: num(5, "volume")?,
        });
    }
    if bars.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    TimeSeriesFrame::new(ticker, bars)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Chronological cut at `floor(ratio * len)`; no shuffling.
pub fn train_test_split(
    frame: &TimeSeriesFrame,
    ratio: f64,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let cut = (ratio * frame.len() as f64).floor() as usize;
    if cut == 0 || cut == frame.len() {
        return Err(Error::Contract(format!(
            "split of {} bars at ratio {ratio} leaves one side empty",
            frame.len()
        )));
    }
    let train = TimeSeriesFrame {
        ticker: frame.ticker.clone(),
        bars: frame.bars[..cut].to_vec(),
    };
    let test = TimeSeriesFrame {
        ticker: frame.ticker.clone(),
        bars: frame.bars[cut..].to_vec(),
    };
    Ok((train, test))
}

/// Per-feature z-score transform, fit on training rows only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: [f64; FEATURES],
    pub stds: [f64; FEATURES],
}

impl FeatureScaler {
    /// Fit on the training frame. Population standard deviation; a
    /// zero-variance feature is an error.
    pub fn fit(train: &TimeSeriesFrame) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("cannot fit a scaler on an empty frame".into()));
        }
        let n = train.len() as f64;
        let mut means = [0.0; FEATURES];
        let mut stds = [0.0; FEATURES];
        for bar in &train.bars {
            for (m, v) in means.iter_mut().zip(bar.features()) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        for bar in &train.bars {
            for ((s, m), v) in stds.iter_mut().zip(&means).zip(bar.features()) {
                let d = v - m;
                *s += d * d;
            }
        }
        const FEATURE_NAMES: [&str; FEATURES] = ["open", "high", "low", "close", "volume"];
        for (i, s) in stds.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s <= 0.0 {
                return Err(Error::Data(format!(
                    "feature '{}' has zero variance on the training rows",
                    FEATURE_NAMES[i]
                )));
            }
        }
        Ok(Self { means, stds })
    }

    /// Scaler that leaves values untouched; handy for tests.
    pub fn identity() -> Self {
        Self {
            means: [0.0; FEATURES],
            stds: [1.0; FEATURES],
        }
    }

    pub fn apply_bar(&self, bar: &OhlcvBar) -> [f64; FEATURES] {
        let mut out = bar.features();
        for ((v, m), s) in out.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
        out
    }

    pub fn invert_feature(&self, feature: usize, value: f64) -> f64 {
        value * self.stds[feature] + self.means[feature]
    }

    pub fn scale_close(&self, close: f64) -> f64 {
        (close - self.means[3]) / self.stds[3]
    }

    pub fn unscale_close(&self, scaled: f64) -> f64 {
        self.invert_feature(3, scaled)
    }
}

/// Sliding windows ready for training: `inputs[i]` holds the scaled features
/// of bars `[i, i+L)` and `targets[i]` the scaled close of bar `i+L`.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    /// `[samples, FEATURES, window]`
    pub inputs: Tensor,
    /// Scaled next-day closes, one per sample.
    pub targets: Vec<f64>,
    /// Date of each target bar.
    pub target_dates: Vec<NaiveDate>,
    pub window: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Copy the selected samples into `[batch, FEATURES, window]` inputs and
    /// `[batch, 1]` targets.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let l = self.window;
        let batch = indices.len();
        let mut x = Tensor::zeros(vec![batch, FEATURES, l]);
        let mut y = Tensor::zeros(vec![batch, 1]);
        let stride = FEATURES * l;
        for (bi, &i) in indices.iter().enumerate() {
            let src = &self.inputs.data()[i * stride..(i + 1) * stride];
            x.data_mut()[bi * stride..(bi + 1) * stride].copy_from_slice(src);
            y.data_mut()[bi] = self.targets[i];
        }
        (x, y)
    }
}

/// Build all windows of length `window` over `frame`.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    scaler: &FeatureScaler,
    window: usize,
) -> Result<WindowedDataset> {
    if window == 0 {
        return Err(Error::Contract("window length must be positive".into()));
    }
    if frame.len() <= window {
        return Err(Error::Contract(format!(
            "frame '{}' has {} bars, need more than the window length {window}",
            frame.ticker,
            frame.len()
        )));
    }
    let samples = frame.len() - window;
    let scaled: Vec<[f64; FEATURES]> = frame.bars.iter().map(|b| scaler.apply_bar(b)).collect();

    let mut inputs = Tensor::zeros(vec![samples, FEATURES, window]);
    let mut targets = Vec::with_capacity(samples);
    let mut target_dates = Vec::with_capacity(samples);
    for i in 0..samples {
        for f in 0..FEATURES {
            for l in 0..window {
                inputs.set3(i, f, l, scaled[i + l][f]);
            }
        }
        targets.push(scaled[i + window][3]);
        target_dates.push(frame.bars[i + window].date);
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        target_dates,
        window,
    })
}
