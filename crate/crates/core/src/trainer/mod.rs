//! Contrastive training of the encoder.
//!
//! A batch holds two non-overlapping windows from one session of each of `N`
//! distinct users; the windows of a session are positives, everything else
//! in the batch is a negative. Gradients of the NT-Xent loss are propagated
//! by hand through the encoder and applied with Adam.

mod adam;
mod batch;
mod fit;
mod loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{optimizer_step, AdamConfig, OptimizerState};
pub use batch::{sample_batch, ContrastiveBatch, SampleSource};
pub use fit::{fit, fit_observed, fit_with, select_best, validation_f1, EpochLog, FitOutcome};
pub use loss::{cosine_similarity, nt_xent_loss, nt_xent_loss_and_grad, Pairing};

use crate::encoder::{network, EncoderConfig, ParameterSet};
use crate::error::{Error, Result};
use crate::signal::StftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub pairs_per_batch: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub dropout_p: f64,
    pub window_sec: f64,
    pub rng_seed: u64,
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub stft: StftConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            pairs_per_batch: 16,
            adam: AdamConfig::default(),
            epochs: 50,
            batches_per_epoch: 100,
            dropout_p: 0.1,
            window_sec: 10.0,
            rng_seed: 42,
            conv_channels: vec![16, 32, 64],
            embedding_dim: 64,
            stft: StftConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if self.pairs_per_batch < 2 {
            return Err(Error::config("a batch needs at least 2 pairs"));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p must lie in [0, 1]"));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::config("epochs and batches_per_epoch must be at least 1"));
        }
        self.stft.validate()
    }

    pub fn encoder_config(&self, fs: f64) -> Result<EncoderConfig> {
        let cfg = EncoderConfig {
            input_shape: self.stft.spectrogram_shape(self.window_sec, fs)?,
            conv_channels: self.conv_channels.clone(),
            embedding_dim: self.embedding_dim,
            init_seed: self.rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// NT-Xent loss of the batch and its exact gradient with respect to every
/// encoder parameter. Per-sample passes run in parallel; the gradient sum
/// is reduced in batch order.
pub fn loss_gradients(
    params: &ParameterSet,
    enc: &EncoderConfig,
    batch: &ContrastiveBatch,
    temperature: f64,
) -> Result<(f64, ParameterSet)> {
    params.check_finite()?;
    let traces = batch
        .specs
        .par_iter()
        .map(|s| network::forward_trace(params, enc, s))
        .collect::<Result<Vec<_>>>()?;
    let embeddings: Vec<&[f64]> = traces.iter().map(|t| t.embedding.as_slice()).collect();
    let (loss, d_embeddings) = nt_xent_loss_and_grad(&embeddings, &batch.pairing, temperature)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            tensor: "loss".into(),
        });
    }
    let per_sample = traces
        .par_iter()
        .zip(d_embeddings.par_iter())
        .map(|(trace, dz)| {
            let mut g = params.zeros_like();
            network::backward(params, enc, trace, dz, &mut g)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = params.zeros_like();
    for g in &per_sample {
        grads.add_assign(g);
    }
    grads.check_finite()?;
    Ok((loss, grads))
}
