use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoder::{Encoder, ParameterSet};
use crate::error::{Error, Result};
use crate::eval::{build_trials, grid_for, sweep_thresholds, EvalConfig};
use crate::model::GaitModel;
use crate::rng::GaitRng;
use crate::signal::{window_len_samples, Stft};

use super::adam::{optimizer_step, OptimizerState};
use super::batch::sample_batch_with;
use super::{loss_gradients, TrainConfig};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the epoch with the best validation F1.
    pub model: GaitModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Index of the first strictly largest score.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Mean per-user F1 at the best threshold of the evaluation protocol.
pub fn validation_f1(model: &GaitModel, val: &Dataset, eval_cfg: &EvalConfig) -> Result<f64> {
    let scores = build_trials(model, val, eval_cfg)?.scores();
    Ok(sweep_thresholds(&scores, &grid_for(&scores, eval_cfg))?.mean_f1)
}

/// Trains on `train` and keeps the epoch scoring best on `val`.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    fold: usize,
) -> Result<FitOutcome> {
    if val.sessions.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    fit_observed(train, cfg, fold, |model| validation_f1(model, val, eval_cfg), |_| {})
}

/// [`fit`] with a caller-supplied validation score.
pub fn fit_with(
    train: &Dataset,
    cfg: &TrainConfig,
    fold: usize,
    validate: impl FnMut(&GaitModel) -> Result<f64>,
) -> Result<FitOutcome> {
    fit_observed(train, cfg, fold, validate, |_| {})
}

/// [`fit_with`] that hands each log line to `on_epoch` as soon as the epoch ends.
pub fn fit_observed(
    train: &Dataset,
    cfg: &TrainConfig,
    fold: usize,
    mut validate: impl FnMut(&GaitModel) -> Result<f64>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let fs = train
        .sessions
        .first()
        .map(|s| s.signal.fs)
        .ok_or_else(|| Error::InsufficientData("training set is empty".into()))?;
    if let Some(s) = train.sessions.iter().find(|s| s.signal.fs != fs) {
        return Err(Error::config(format!(
            "session {} is sampled at {} Hz, expected {fs} Hz",
            s.session_id(),
            s.signal.fs
        )));
    }
    let w = window_len_samples(cfg.window_sec, fs);
    let eligible = train
        .by_user()
        .values()
        .filter(|ss| ss.iter().any(|s| s.signal.len() >= 2 * w))
        .count();
    let mut cfg = cfg.clone();
    cfg.pairs_per_batch = cfg.pairs_per_batch.min(eligible);
    if cfg.pairs_per_batch < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 users with a session of at least {:.1} s, {eligible} available",
            2.0 * cfg.window_sec
        )));
    }

    let enc_cfg = cfg.encoder_config(fs)?;
    let stft = Stft::new(cfg.stft)?;
    let mut encoder = Encoder::init(enc_cfg.clone())?;
    let mut state = OptimizerState::new(&encoder.params);
    let mut rng = GaitRng::seed_from(cfg.rng_seed);
    let model_of = |params: &ParameterSet| -> Result<GaitModel> {
        GaitModel::new(
            Encoder {
                config: enc_cfg.clone(),
                params: params.clone(),
            },
            cfg.stft,
            cfg.window_sec,
            fs,
        )
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut total = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let batch = sample_batch_with(train, &cfg, &stft, &mut rng)?;
            let (loss, grads) = loss_gradients(&encoder.params, &enc_cfg, &batch, cfg.temperature)?;
            optimizer_step(&mut encoder.params, &grads, &mut state, &cfg.adam)?;
            encoder.params.round_to_f32();
            encoder.params.check_finite()?;
            total += loss;
        }
        let mean_loss = total / cfg.batches_per_epoch as f64;
        let val_f1 = validate(&model_of(&encoder.params)?)?;
        if best.as_ref().map_or(true, |(f, _, _)| val_f1 > *f) {
            best = Some((val_f1, epoch, encoder.params.clone()));
        }
        let line = EpochLog {
            fold,
            epoch,
            mean_loss,
            val_f1,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&line);
        log.push(line);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(FitOutcome {
        model: model_of(&params)?,
        best_epoch,
        log,
    })
}
