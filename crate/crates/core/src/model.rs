//! A trained encoder together with the preprocessing it expects.
//!
//! Model files are "GAIT" parameter files holding the encoder tensors plus
//! four `meta.*` tensors:
//!
//! | name               | values                                      |
//! |--------------------|---------------------------------------------|
//! | `meta.input_shape` | `[freq_bins, frames]`                       |
//! | `meta.window_sec`  | `[window length in seconds]`                |
//! | `meta.fs`          | `[sample rate in Hz]`                       |
//! | `meta.stft`        | `[frame_len, hop, fft_len, log10(db_eps)]`  |

use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{self, EmbeddingVector, Encoder, EncoderConfig, ParameterSet, Tensor};
use crate::error::{Error, Result};
use crate::signal::{window_len_samples, MagnitudeSeries, Spectrogram, Stft, StftConfig};

#[derive(Debug, Clone)]
pub struct GaitModel {
    pub encoder: Encoder,
    pub stft: Stft,
    pub window_sec: f64,
    pub fs: f64,
}

impl GaitModel {
    pub fn new(encoder: Encoder, stft: StftConfig, window_sec: f64, fs: f64) -> Result<Self> {
        let shape = stft.spectrogram_shape(window_sec, fs)?;
        if shape != encoder.config.input_shape {
            return Err(Error::ShapeMismatch {
                expected: vec![encoder.config.input_shape.0, encoder.config.input_shape.1],
                got: vec![shape.0, shape.1],
            });
        }
        Ok(Self {
            encoder,
            stft: Stft::new(stft)?,
            window_sec,
            fs,
        })
    }

    pub fn window_len(&self) -> usize {
        window_len_samples(self.window_sec, self.fs)
    }

    pub fn spectrogram(&self, window: &[f64]) -> Result<Spectrogram> {
        self.stft.spectrogram(window)
    }

    pub fn embed(&self, window: &[f64]) -> Result<EmbeddingVector> {
        self.encoder.forward(&self.spectrogram(window)?)
    }

    /// Embeds the windows of `signal` starting at each of `starts`.
    pub fn embed_at(&self, signal: &MagnitudeSeries, starts: &[usize]) -> Result<Vec<EmbeddingVector>> {
        let len = self.window_len();
        if let Some(&bad) = starts.iter().find(|&&s| s + len > signal.len()) {
            return Err(Error::InsufficientData(format!(
                "window at sample {bad} runs past the end of a {}-sample signal",
                signal.len()
            )));
        }
        starts
            .par_iter()
            .enumerate()
            .map(|(index, &s)| {
                self.embed(&signal.values[s..s + len]).map_err(|e| Error::BatchElement {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    pub fn to_param_set(&self) -> ParameterSet {
        let cfg = self.stft.config();
        let (rows, cols) = self.encoder.config.input_shape;
        let mut tensors = vec![
            Tensor {
                name: "meta.input_shape".into(),
                shape: vec![2],
                data: vec![rows as f64, cols as f64],
            },
            Tensor {
                name: "meta.window_sec".into(),
                shape: vec![1],
                data: vec![self.window_sec],
            },
            Tensor {
                name: "meta.fs".into(),
                shape: vec![1],
                data: vec![self.fs],
            },
            Tensor {
                name: "meta.stft".into(),
                shape: vec![4],
                data: vec![
                    cfg.frame_len as f64,
                    cfg.hop as f64,
                    cfg.fft_len as f64,
                    cfg.db_floor_eps.log10(),
                ],
            },
        ];
        tensors.extend(self.encoder.params.tensors.iter().cloned());
        ParameterSet::new(tensors)
    }

    pub fn from_param_set(params: &ParameterSet) -> Result<Self> {
        let meta = |name: &str, len: usize| -> Result<Vec<f64>> {
            let t = params.expect(name)?;
            if t.data.len() != len {
                return Err(Error::config(format!("{name} must hold {len} values")));
            }
            Ok(t.data.clone())
        };
        let shape = meta("meta.input_shape", 2)?;
        let input_shape = (shape[0] as usize, shape[1] as usize);
        let window_sec = meta("meta.window_sec", 1)?[0];
        let fs = meta("meta.fs", 1)?[0];
        let s = meta("meta.stft", 4)?;
        let stft = StftConfig {
            frame_len: s[0] as usize,
            hop: s[1] as usize,
            fft_len: s[2] as usize,
            db_floor_eps: 10f64.powf(s[3]),
        };
        let config = EncoderConfig::infer(params, input_shape)?;
        let encoder = Encoder::from_params(config, encoder::trainable(params))?;
        Self::new(encoder, stft, window_sec, fs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        encoder::save_params(&self.to_param_set(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_param_set(&encoder::load_params(path)?)
    }
}
