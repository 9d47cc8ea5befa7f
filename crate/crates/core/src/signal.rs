//! Accelerometer signal pipeline.
//!
//! Raw 3-axis acceleration (in g) is reduced to its magnitude, cut into
//! fixed-duration windows, and turned into a dB power spectrogram with a
//! symmetric Hann-weighted STFT. Training additionally zeroes random
//! spectrogram cells ([`pixel_dropout`]).

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::GaitRng;

/// Nominal accelerometer rate of the headphones.
pub const DEFAULT_FS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelSeries {
    pub samples: Vec<AccelSample>,
    pub fs: f64,
}

impl AccelSeries {
    pub fn new(samples: Vec<AccelSample>, fs: f64) -> Result<Self> {
        let series = Self { samples, fs };
        series.validate()?;
        Ok(series)
    }

    /// Checks the series invariants: non-empty, finite, strictly increasing
    /// timestamps, and a median sample gap within 1% of `1/fs`.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidSeries(format!("sample rate {} Hz", self.fs)));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if ![s.t, s.ax, s.ay, s.az].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSeries(format!("non-finite value at sample {i}")));
            }
        }
        let mut gaps: Vec<f64> = self
            .samples
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .collect();
        if let Some(i) = gaps.iter().position(|&g| g <= 0.0) {
            return Err(Error::InvalidSeries(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        if !gaps.is_empty() {
            gaps.sort_by(f64::total_cmp);
            let median = gaps[gaps.len() / 2];
            let nominal = 1.0 / self.fs;
            if (median - nominal).abs() >= 0.01 * nominal {
                return Err(Error::InvalidSeries(format!(
                    "median sample gap {median:.6} s deviates from 1/fs = {nominal:.6} s by 1% or more"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSeries {
    pub values: Vec<f64>,
    pub fs: f64,
}

impl MagnitudeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.values.len() as f64 / self.fs
    }

    /// Copies `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> MagnitudeSeries {
        MagnitudeSeries {
            values: self.values[start..start + len].to_vec(),
            fs: self.fs,
        }
    }
}

/// Per-sample Euclidean norm of the acceleration vector.
pub fn magnitude(series: &AccelSeries) -> Result<MagnitudeSeries> {
    if series.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values = series
        .samples
        .iter()
        .map(|s| (s.ax * s.ax + s.ay * s.ay + s.az * s.az).sqrt())
        .collect();
    Ok(MagnitudeSeries {
        values,
        fs: series.fs,
    })
}

/// Number of samples covered by `window_sec` at rate `fs`.
pub fn window_len_samples(window_sec: f64, fs: f64) -> usize {
    (window_sec * fs).round() as usize
}

/// Start indices of full windows of `window_len` samples, `stride` apart.
pub fn window_starts(series_len: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if window_len == 0 || stride == 0 || series_len < window_len {
        return Vec::new();
    }
    (0..=(series_len - window_len) / stride)
        .map(|i| i * stride)
        .collect()
}

/// Stride in samples between consecutive windows for a given overlap.
pub fn window_stride(window_len: usize, overlap_frac: f64) -> usize {
    ((window_len as f64) * (1.0 - overlap_frac)).round().max(1.0) as usize
}

fn check_window_params(window_sec: f64, overlap_frac: f64) -> Result<()> {
    if !(window_sec.is_finite() && window_sec > 0.0) {
        return Err(Error::config(format!("window length {window_sec} s must be positive")));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::config(format!("overlap {overlap_frac} must lie in [0, 1)")));
    }
    Ok(())
}

/// Cuts the series into equal-length windows; a trailing partial window is
/// dropped. A series shorter than one window yields no windows.
pub fn slice_windows(
    series: &MagnitudeSeries,
    window_sec: f64,
    overlap_frac: f64,
) -> Result<Vec<MagnitudeSeries>> {
    check_window_params(window_sec, overlap_frac)?;
    let len = window_len_samples(window_sec, series.fs);
    let stride = window_stride(len, overlap_frac);
    Ok(window_starts(series.len(), len, stride)
        .into_iter()
        .map(|s| series.slice(s, len))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub db_floor_eps: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 128,
            hop: 64,
            fft_len: 128,
            db_floor_eps: 1e-12,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.hop && self.hop <= self.frame_len && self.frame_len <= self.fft_len) {
            return Err(Error::config(format!(
                "STFT requires 0 < hop ({}) <= frame_len ({}) <= fft_len ({})",
                self.hop, self.frame_len, self.fft_len
            )));
        }
        if !(self.db_floor_eps > 0.0 && self.db_floor_eps.is_finite()) {
            return Err(Error::config("STFT dB floor must be positive"));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Frames produced for a window of `len` samples (0 if shorter than a frame).
    pub fn frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// `(freq_bins, frames)` of the spectrogram of a `window_sec` window.
    pub fn spectrogram_shape(&self, window_sec: f64, fs: f64) -> Result<(usize, usize)> {
        let len = window_len_samples(window_sec, fs);
        if len < self.frame_len {
            return Err(Error::WindowTooShort {
                len,
                frame_len: self.frame_len,
            });
        }
        Ok((self.freq_bins(), self.frames(len)))
    }
}

/// Symmetric Hann window, `w[k] = 0.5 (1 - cos(2 pi k / (n - 1)))`.
pub fn hann(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n)
            .map(|k| 0.5 * (1.0 - (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos()))
            .collect(),
    }
}

/// Reusable STFT plan: Hann taper plus FFT of `fft_len` points.
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len);
        Ok(Self {
            cfg,
            window: hann(cfg.frame_len),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// `F x T` power array, frames zero-padded to `fft_len`.
    pub fn power(&self, signal: &[f64]) -> Result<Array2<f64>> {
        let cfg = &self.cfg;
        if signal.len() < cfg.frame_len {
            return Err(Error::WindowTooShort {
                len: signal.len(),
                frame_len: cfg.frame_len,
            });
        }
        let frames = cfg.frames(signal.len());
        let bins = cfg.freq_bins();
        let mut out = Array2::zeros((bins, frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        for f in 0..frames {
            let frame = &signal[f * cfg.hop..f * cfg.hop + cfg.frame_len];
            for (slot, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex64::new(x * w, 0.0);
            }
            for slot in buf[cfg.frame_len..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                out[[k, f]] = buf[k].norm_sqr();
            }
        }
        Ok(out)
    }

    pub fn spectrogram(&self, signal: &[f64]) -> Result<Spectrogram> {
        Ok(power_to_db(&self.power(signal)?, self.cfg.db_floor_eps))
    }
}

pub fn stft_power(window: &MagnitudeSeries, cfg: &StftConfig) -> Result<Array2<f64>> {
    Stft::new(*cfg)?.power(&window.values)
}

/// Frequency x time array of dB values; rows are frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<f64>,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

pub fn power_to_db(power: &Array2<f64>, eps: f64) -> Spectrogram {
    Spectrogram {
        data: power.mapv(|p| 10.0 * p.max(eps).log10()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub dropout_p: f64,
    pub rng_seed: u64,
}

/// Replaces each cell with 0.0 independently with probability `dropout_p`.
/// Cells are visited in row-major order, one uniform draw per cell.
pub fn pixel_dropout(spec: &Spectrogram, cfg: &AugmentConfig) -> Result<Spectrogram> {
    if !(0.0..=1.0).contains(&cfg.dropout_p) {
        return Err(Error::config(format!(
            "dropout probability {} outside [0, 1]",
            cfg.dropout_p
        )));
    }
    let mut rng = GaitRng::seed_from(cfg.rng_seed);
    let mut data = spec.data.clone();
    for v in data.iter_mut() {
        if rng.uniform() < cfg.dropout_p {
            *v = 0.0;
        }
    }
    Ok(Spectrogram { data })
}
