//! Convolutional spectrogram encoder.
//!
//! The contracting half of a U-Net: per stage a 3x3 same-padded convolution,
//! ReLU and 2x2 max-pool (floor division; an axis already reduced to one
//! cell is passed through). A global average pool and a dense layer produce
//! the raw embedding, which is L2-normalized.

mod format;
pub(crate) mod network;
mod params;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use format::{decode, encode, load_params, save_params, MAGIC, VERSION};
pub use params::{ParameterSet, Tensor};

use crate::error::{Error, Result};
use crate::rng::GaitRng;
use crate::signal::Spectrogram;

pub const KERNEL: usize = 3;
pub const DENSE_WEIGHT: &str = "dense.weight";
pub const DENSE_BIAS: &str = "dense.bias";

pub fn conv_weight_name(stage: usize) -> String {
    format!("conv{}.weight", stage + 1)
}

pub fn conv_bias_name(stage: usize) -> String {
    format!("conv{}.bias", stage + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// `(freq_bins, frames)` of the input spectrogram.
    pub input_shape: (usize, usize),
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub init_seed: u64,
}

impl EncoderConfig {
    pub fn new(input_shape: (usize, usize)) -> Self {
        Self {
            input_shape,
            conv_channels: vec![16, 32, 64],
            embedding_dim: 64,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.input_shape;
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "input shape {rows}x{cols} has an empty axis"
            )));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::config("encoder needs at least one stage with >= 1 channel"));
        }
        if self.embedding_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        let (r, c) = self.output_spatial();
        if r == 0 || c == 0 {
            return Err(Error::config("pooling collapses the spatial grid below 1x1"));
        }
        Ok(())
    }

    /// Spatial size after the last pooling stage.
    pub fn output_spatial(&self) -> (usize, usize) {
        let (mut r, mut c) = self.input_shape;
        for _ in &self.conv_channels {
            r /= network::pool_factor(r);
            c /= network::pool_factor(c);
        }
        (r, c)
    }

    /// Reconstructs the architecture from tensor shapes.
    pub fn infer(params: &ParameterSet, input_shape: (usize, usize)) -> Result<Self> {
        let mut conv_channels = Vec::new();
        while let Some(t) = params.get(&conv_weight_name(conv_channels.len())) {
            conv_channels.push(t.shape[0]);
        }
        let dense = params.expect(DENSE_WEIGHT)?;
        let cfg = Self {
            input_shape,
            conv_channels,
            embedding_dim: dense.shape[0],
            init_seed: 0,
        };
        cfg.validate()?;
        let expected = init_params(&cfg)?;
        if !expected.same_layout(&trainable(params)) {
            return Err(Error::config("parameter tensors do not match an encoder layout"));
        }
        Ok(cfg)
    }
}

/// Tensors other than `meta.*` entries.
pub(crate) fn trainable(params: &ParameterSet) -> ParameterSet {
    ParameterSet::new(
        params
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with("meta."))
            .cloned()
            .collect(),
    )
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases. Values are
/// drawn tensor by tensor in layout order and stored at f32 precision.
pub fn init_params(cfg: &EncoderConfig) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = GaitRng::seed_from(cfg.init_seed);
    let mut tensors = Vec::new();
    let mut c_in = 1;
    let he = |shape: Vec<usize>, fan_in: usize, name: String, rng: &mut GaitRng| {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v = rng.uniform_range(-bound, bound) as f32;
                let v = if (v as f64).abs() > bound {
                    // rounding to f32 stepped outside the bound
                    f32::from_bits(v.to_bits() - 1)
                } else {
                    v
                };
                v as f64
            })
            .collect();
        Tensor { name, shape, data }
    };
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        tensors.push(he(
            vec![c_out, c_in, KERNEL, KERNEL],
            c_in * KERNEL * KERNEL,
            conv_weight_name(i),
            &mut rng,
        ));
        tensors.push(Tensor::zeros(conv_bias_name(i), vec![c_out]));
        c_in = c_out;
    }
    tensors.push(he(
        vec![cfg.embedding_dim, c_in],
        c_in,
        DENSE_WEIGHT.to_owned(),
        &mut rng,
    ));
    tensors.push(Tensor::zeros(DENSE_BIAS, vec![cfg.embedding_dim]));
    Ok(ParameterSet::new(tensors))
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw`; a zero vector is degenerate.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                tensor: "embedding".into(),
            });
        }
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self(raw.iter().map(|v| v / norm).collect()))
    }

    /// Wraps values already known to be unit norm.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Re-normalized copy stored at f32 precision.
    pub fn to_f32_precision(&self) -> Result<Self> {
        let v: Vec<f64> = Self::normalize(&self.0)?
            .0
            .iter()
            .map(|&x| x as f32 as f64)
            .collect();
        Ok(Self(v))
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Encoder architecture plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParameterSet,
}

impl Encoder {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        if !init_params(&config)?.same_layout(&params) {
            return Err(Error::config("parameter layout does not match encoder config"));
        }
        Ok(Self { config, params })
    }

    pub fn forward(&self, spec: &Spectrogram) -> Result<EmbeddingVector> {
        forward(&self.params, &self.config, spec)
    }

    pub fn forward_batch(&self, specs: &[Spectrogram]) -> Result<Vec<EmbeddingVector>> {
        forward_batch(&self.params, &self.config, specs)
    }
}

pub fn forward(params: &ParameterSet, cfg: &EncoderConfig, spec: &Spectrogram) -> Result<EmbeddingVector> {
    let trace = network::forward_trace(params, cfg, spec)?;
    Ok(EmbeddingVector::from_unit(trace.embedding))
}

/// Elementwise [`forward`], evaluated in parallel; output order matches input.
pub fn forward_batch(
    params: &ParameterSet,
    cfg: &EncoderConfig,
    specs: &[Spectrogram],
) -> Result<Vec<EmbeddingVector>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            forward(params, cfg, s).map_err(|e| Error::BatchElement {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn spec(rows: usize, cols: usize, seed: u64) -> Spectrogram {
        let mut rng = GaitRng::seed_from(seed);
        Spectrogram {
            data: Array2::from_shape_fn((rows, cols), |_| rng.uniform_range(-40.0, 30.0)),
        }
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            input_shape: (9, 4),
            conv_channels: vec![2, 2],
            embedding_dim: 4,
            init_seed: 5,
        }
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let cfg = EncoderConfig::new((65, 14));
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert!(a.bit_eq(&b));
        let c = init_params(&EncoderConfig { init_seed: 1, ..cfg.clone() }).unwrap();
        assert!(!a.bit_eq(&c));
        let names: Vec<&str> = a.tensors.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight",
                "conv3.bias", "dense.weight", "dense.bias"
            ]
        );
        for t in &a.tensors {
            if t.name.ends_with("bias") {
                assert!(t.data.iter().all(|&v| v == 0.0));
            } else {
                let fan_in: usize = t.shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                assert!(t.data.iter().all(|v| v.abs() <= bound), "{}", t.name);
                assert!(t.data.iter().all(|&v| v == v as f32 as f64));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small();
        cfg.input_shape = (0, 4);
        assert!(init_params(&cfg).is_err());
        let mut cfg = small();
        cfg.embedding_dim = 1;
        assert!(init_params(&cfg).is_err());
        let mut cfg = small();
        cfg.conv_channels.clear();
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn default_config_handles_short_windows() {
        // 3 s windows give 3 frames; the time axis stops shrinking at 1.
        let cfg = EncoderConfig::new((65, 3));
        assert_eq!(cfg.output_spatial(), (8, 1));
        assert_eq!(EncoderConfig::new((65, 14)).output_spatial(), (8, 1));
        assert_eq!(EncoderConfig::new((65, 24)).output_spatial(), (8, 3));
    }

    #[test]
    fn forward_unit_norm_and_deterministic() {
        let enc = Encoder::init(EncoderConfig::new((65, 14))).unwrap();
        for seed in 0..5 {
            let s = spec(65, 14, seed);
            let a = enc.forward(&s).unwrap();
            let b = enc.forward(&s).unwrap();
            assert_eq!(a.dim(), 64);
            assert!((a.norm() - 1.0).abs() < 1e-6);
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn scaled_input_stays_on_sphere() {
        let enc = Encoder::init(small()).unwrap();
        let s = spec(9, 4, 3);
        let scaled = Spectrogram { data: &s.data * 7.5 };
        let e = enc.forward(&scaled).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_input_is_degenerate() {
        let enc = Encoder::init(small()).unwrap();
        let zero = Spectrogram {
            data: Array2::zeros((9, 4)),
        };
        assert!(matches!(enc.forward(&zero), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let enc = Encoder::init(small()).unwrap();
        let err = enc.forward(&spec(9, 5, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[9, 4]") && msg.contains("[9, 5]"), "{msg}");
    }

    #[test]
    fn batch_matches_sequential() {
        let enc = Encoder::init(EncoderConfig::new((65, 14))).unwrap();
        let specs: Vec<_> = (0..64).map(|i| spec(65, 14, 100 + i)).collect();
        let batch = enc.forward_batch(&specs).unwrap();
        for (s, b) in specs.iter().zip(&batch) {
            let seq = enc.forward(s).unwrap();
            assert!(seq.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let one = enc.forward_batch(&specs[..1]).unwrap();
        assert_eq!(one[0], enc.forward(&specs[0]).unwrap());
        let mut rev = specs.clone();
        rev.reverse();
        let mut out = enc.forward_batch(&rev).unwrap();
        out.reverse();
        assert_eq!(out, batch);
    }

    #[test]
    fn batch_error_carries_index() {
        let enc = Encoder::init(small()).unwrap();
        let specs = vec![spec(9, 4, 1), spec(9, 4, 2), Spectrogram { data: Array2::zeros((9, 4)) }];
        match enc.forward_batch(&specs) {
            Err(Error::BatchElement { index: 2, source }) => {
                assert!(matches!(*source, Error::DegenerateEmbedding))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gait");
        let p = init_params(&EncoderConfig::new((65, 14))).unwrap();
        save_params(&p, &path).unwrap();
        let back = load_params(&path).unwrap();
        assert!(back.bit_eq(&p));
        assert_eq!(EncoderConfig::infer(&back, (65, 14)).unwrap().conv_channels, vec![16, 32, 64]);
    }
}
