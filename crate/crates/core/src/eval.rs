//! Per-user verification protocol, threshold sweep and error rates.
//!
//! Each test user is enrolled from ten windows at 50% overlap taken from the
//! start of an enrollment session. Probe windows are cut on a non-overlapping
//! grid that begins after that enrollment span in every probe session, so
//! probes never overlap enrollment data. Every user faces 40 genuine probes
//! and 15 probes from each other test user.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Session};
use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::identity::{IdentityStore, Template};
use crate::model::GaitModel;
use crate::rng::GaitRng;
use crate::signal::{window_starts, window_stride};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub enroll_windows: usize,
    pub enroll_overlap: f64,
    pub genuine_trials: usize,
    pub impostor_per_user: usize,
    pub threshold_step: f64,
    pub threshold_max: f64,
    pub rng_seed: u64,
    pub folds: usize,
    pub fold_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            enroll_windows: 10,
            enroll_overlap: 0.5,
            genuine_trials: 40,
            impostor_per_user: 15,
            threshold_step: 0.005,
            threshold_max: 1.0,
            rng_seed: 42,
            folds: 6,
            fold_size: 8,
        }
    }
}

/// Largest threshold the grid is extended to when distances exceed `threshold_max`.
pub const MAX_COSINE_DISTANCE: f64 = 2.0;

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enroll_windows == 0 || self.genuine_trials == 0 || self.impostor_per_user == 0 {
            return Err(Error::config("trial counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.enroll_overlap) {
            return Err(Error::config("enroll_overlap must lie in [0, 1)"));
        }
        if !(self.threshold_step > 0.0 && self.threshold_max > 0.0) {
            return Err(Error::config("threshold grid step and max must be positive"));
        }
        if self.folds == 0 || self.fold_size == 0 {
            return Err(Error::config("folds and fold_size must be at least 1"));
        }
        Ok(())
    }

    /// Samples spanned by the enrollment windows.
    pub fn enroll_span(&self, window_len: usize) -> usize {
        window_len + (self.enroll_windows - 1) * window_stride(window_len, self.enroll_overlap)
    }
}

/// `0, step, 2 step, ...` up to and including `max` (within rounding).
pub fn threshold_grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// A window of one session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct WindowRef {
    pub user_id: String,
    pub session_id: String,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub probe: WindowRef,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserTrials {
    pub user_id: String,
    pub enrollment: Vec<WindowRef>,
    pub templates: usize,
    pub genuine: Vec<Trial>,
    pub impostor: Vec<Trial>,
}

/// Genuine and impostor distances of one enrolled user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSet {
    pub users: Vec<UserTrials>,
}

impl TrialSet {
    pub fn scores(&self) -> Vec<UserScores> {
        self.users
            .iter()
            .map(|u| UserScores {
                genuine: u.genuine.iter().map(|t| t.distance).collect(),
                impostor: u.impostor.iter().map(|t| t.distance).collect(),
            })
            .collect()
    }
}

/// Sessions used to enroll and probe one user.
#[derive(Debug, Clone)]
pub struct UserPlan {
    pub user_id: String,
    /// `(appearance_id, session)`; one template per entry.
    pub enroll: Vec<(String, Arc<Session>)>,
    pub probe_sessions: Vec<Arc<Session>>,
}

/// Default plan: enroll from the user's first session, probe from all of them.
pub fn default_plans(dataset: &Dataset) -> Vec<UserPlan> {
    dataset
        .user_ids()
        .into_iter()
        .map(|u| {
            let sessions = dataset.sessions_of(&u);
            UserPlan {
                enroll: vec![("default".to_owned(), sessions[0].clone())],
                probe_sessions: sessions,
                user_id: u,
            }
        })
        .collect()
}

fn probe_pool(plan: &UserPlan, span: usize, w: usize) -> Vec<WindowRef> {
    plan.probe_sessions
        .iter()
        .flat_map(|s| {
            let len = s.signal.len();
            let starts = if len >= span { window_starts(len - span, w, w) } else { Vec::new() };
            starts.into_iter().map(move |st| WindowRef {
                user_id: plan.user_id.clone(),
                session_id: s.session_id().to_owned(),
                start: span + st,
            })
        })
        .collect()
}

pub fn build_trials(model: &GaitModel, dataset: &Dataset, cfg: &EvalConfig) -> Result<TrialSet> {
    build_trials_with(model, &default_plans(dataset), cfg)
}

/// Enrolls every planned user and draws its genuine and impostor probes.
pub fn build_trials_with(model: &GaitModel, plans: &[UserPlan], cfg: &EvalConfig) -> Result<TrialSet> {
    cfg.validate()?;
    if plans.is_empty() {
        return Err(Error::InsufficientData("no users to evaluate".into()));
    }
    let w = model.window_len();
    let span = cfg.enroll_span(w);
    let stride = window_stride(w, cfg.enroll_overlap);

    let mut sessions: HashMap<String, Arc<Session>> = HashMap::new();
    let mut enrollments = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut appearances = Vec::new();
        for (appearance, session) in &plan.enroll {
            let len = session.signal.len();
            if len < span {
                return Err(Error::InsufficientData(format!(
                    "user {}: enrollment session {} has {len} samples, {span} needed for {} windows",
                    plan.user_id,
                    session.session_id(),
                    cfg.enroll_windows
                )));
            }
            sessions.insert(session.session_id().to_owned(), session.clone());
            let refs: Vec<WindowRef> = (0..cfg.enroll_windows)
                .map(|i| WindowRef {
                    user_id: plan.user_id.clone(),
                    session_id: session.session_id().to_owned(),
                    start: i * stride,
                })
                .collect();
            appearances.push((appearance.clone(), refs));
        }
        for s in &plan.probe_sessions {
            sessions.insert(s.session_id().to_owned(), s.clone());
        }
        enrollments.push(appearances);
    }

    let pools: Vec<Vec<WindowRef>> = plans.iter().map(|p| probe_pool(p, span, w)).collect();
    let mut rng = GaitRng::seed_from(cfg.rng_seed);
    let mut draws = Vec::with_capacity(plans.len());
    for (ui, plan) in plans.iter().enumerate() {
        let pool = &pools[ui];
        if pool.len() < cfg.genuine_trials {
            return Err(Error::InsufficientData(format!(
                "user {}: {} probe windows available after enrollment, {} genuine trials needed",
                plan.user_id,
                pool.len(),
                cfg.genuine_trials
            )));
        }
        let genuine: Vec<WindowRef> = rng
            .sample_indices(pool.len(), cfg.genuine_trials)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let mut impostor = Vec::new();
        for (vi, other) in pools.iter().enumerate() {
            if vi == ui {
                continue;
            }
            if other.len() < cfg.impostor_per_user {
                return Err(Error::InsufficientData(format!(
                    "user {}: {} probe windows available, {} impostor trials needed",
                    plans[vi].user_id,
                    other.len(),
                    cfg.impostor_per_user
                )));
            }
            impostor.extend(
                rng.sample_indices(other.len(), cfg.impostor_per_user)
                    .into_iter()
                    .map(|i| other[i].clone()),
            );
        }
        draws.push((genuine, impostor));
    }

    // Embed every distinct window once.
    let mut needed: Vec<WindowRef> = enrollments
        .iter()
        .flatten()
        .flat_map(|(_, refs)| refs.iter().cloned())
        .chain(draws.iter().flat_map(|(g, i)| g.iter().chain(i).cloned()))
        .collect();
    needed.sort();
    needed.dedup();
    let embedded = needed
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            let signal = &sessions[&r.session_id].signal;
            model
                .embed(&signal.values[r.start..r.start + w])
                .map_err(|e| Error::BatchElement {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let cache: HashMap<&WindowRef, &EmbeddingVector> = needed.iter().zip(&embedded).collect();

    let created_at = DateTime::<Utc>::UNIX_EPOCH;
    let mut users = Vec::with_capacity(plans.len());
    for ((plan, appearances), (genuine, impostor)) in plans.iter().zip(enrollments).zip(draws) {
        let mut store = IdentityStore::new();
        let mut enrollment = Vec::new();
        for (appearance, refs) in appearances {
            let embs: Vec<EmbeddingVector> = refs.iter().map(|r| cache[r].clone()).collect();
            store.upsert(&plan.user_id, Template::from_embeddings(appearance, &embs, created_at)?);
            enrollment.extend(refs);
        }
        let trial = |r: WindowRef| -> Result<Trial> {
            let distance = store.verify(&plan.user_id, cache[&r].values(), 0.0)?.distance;
            Ok(Trial { probe: r, distance })
        };
        users.push(UserTrials {
            user_id: plan.user_id.clone(),
            templates: plan.enroll.len(),
            enrollment,
            genuine: genuine.into_iter().map(trial).collect::<Result<_>>()?,
            impostor: impostor.into_iter().map(trial).collect::<Result<_>>()?,
        });
    }
    Ok(TrialSet { users })
}

/// F1 of one user's trials when accepting distances `<= theta`; 0 without true positives.
pub fn f1_at_threshold(scores: &UserScores, theta: f64) -> f64 {
    let tp = scores.genuine.iter().filter(|&&d| d <= theta).count();
    let fn_ = scores.genuine.len() - tp;
    let fp = scores.impostor.iter().filter(|&&d| d <= theta).count();
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub best_theta: f64,
    pub mean_f1: f64,
    pub per_user_f1: Vec<f64>,
    /// Mean F1 at every grid threshold.
    pub mean_f1_curve: Vec<f64>,
}

/// Mean-over-users F1 at every threshold; the best one, ties to the smallest threshold.
pub fn sweep_thresholds(scores: &[UserScores], grid: &[f64]) -> Result<Sweep> {
    if grid.is_empty() || scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let curve: Vec<f64> = grid
        .iter()
        .map(|&t| scores.iter().map(|s| f1_at_threshold(s, t)).sum::<f64>() / scores.len() as f64)
        .collect();
    let mut best = 0;
    for (i, &f) in curve.iter().enumerate() {
        if f > curve[best] {
            best = i;
        }
    }
    Ok(Sweep {
        best_theta: grid[best],
        mean_f1: curve[best],
        per_user_f1: scores.iter().map(|s| f1_at_threshold(s, grid[best])).collect(),
        mean_f1_curve: curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurves {
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub eer: f64,
    pub eer_theta: f64,
    /// False when FAR and FRR never cross on the grid; the EER is then taken
    /// at the threshold minimizing `|FAR - FRR|`.
    pub crossing_found: bool,
}

/// FAR and FRR averaged per user then across users, and the equal error rate.
pub fn far_frr_eer(scores: &[UserScores], grid: &[f64]) -> Result<ErrorCurves> {
    if grid.is_empty() || scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().any(|s| s.genuine.is_empty() || s.impostor.is_empty()) {
        return Err(Error::InsufficientData(
            "every user needs genuine and impostor trials".into(),
        ));
    }
    let u = scores.len() as f64;
    let far: Vec<f64> = grid
        .iter()
        .map(|&t| {
            scores
                .iter()
                .map(|s| s.impostor.iter().filter(|&&d| d <= t).count() as f64 / s.impostor.len() as f64)
                .sum::<f64>()
                / u
        })
        .collect();
    let frr: Vec<f64> = grid
        .iter()
        .map(|&t| {
            scores
                .iter()
                .map(|s| s.genuine.iter().filter(|&&d| d > t).count() as f64 / s.genuine.len() as f64)
                .sum::<f64>()
                / u
        })
        .collect();
    let diff: Vec<f64> = far.iter().zip(&frr).map(|(a, r)| a - r).collect();
    for i in 0..grid.len() {
        if diff[i] == 0.0 {
            return Ok(ErrorCurves {
                eer: far[i],
                eer_theta: grid[i],
                far,
                frr,
                crossing_found: true,
            });
        }
        if i + 1 < grid.len() && diff[i] < 0.0 && diff[i + 1] > 0.0 {
            let t = -diff[i] / (diff[i + 1] - diff[i]);
            return Ok(ErrorCurves {
                eer: far[i] + t * (far[i + 1] - far[i]),
                eer_theta: grid[i] + t * (grid[i + 1] - grid[i]),
                far,
                frr,
                crossing_found: true,
            });
        }
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if diff[i].abs() < diff[best].abs() {
            best = i;
        }
    }
    Ok(ErrorCurves {
        eer: (far[best] + frr[best]) / 2.0,
        eer_theta: grid[best],
        far,
        frr,
        crossing_found: false,
    })
}

/// The configured grid, extended to the largest cosine distance if any
/// observed distance lies beyond it.
pub fn grid_for(scores: &[UserScores], cfg: &EvalConfig) -> Vec<f64> {
    let max_seen = scores
        .iter()
        .flat_map(|s| s.genuine.iter().chain(&s.impostor))
        .cloned()
        .fold(0.0, f64::max);
    let max = if max_seen > cfg.threshold_max { MAX_COSINE_DISTANCE } else { cfg.threshold_max };
    threshold_grid(cfg.threshold_step, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: String,
    pub f1: f64,
    pub genuine_trials: usize,
    pub impostor_trials: usize,
    pub templates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldInfo {
    pub experiment: usize,
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub validation_wrapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_f1: f64,
    pub best_theta: f64,
    pub eer: f64,
    pub eer_theta: f64,
    pub eer_crossing_found: bool,
    pub per_user: Vec<UserReport>,
    pub thresholds: Vec<f64>,
    pub far_curve: Vec<f64>,
    pub frr_curve: Vec<f64>,
    pub window_sec: f64,
    pub config: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<FoldInfo>,
}

impl EvalReport {
    pub fn from_trials(trials: &TrialSet, cfg: &EvalConfig, window_sec: f64) -> Result<Self> {
        let scores = trials.scores();
        let grid = grid_for(&scores, cfg);
        let sweep = sweep_thresholds(&scores, &grid)?;
        let curves = far_frr_eer(&scores, &grid)?;
        Ok(Self {
            mean_f1: sweep.mean_f1,
            best_theta: sweep.best_theta,
            eer: curves.eer,
            eer_theta: curves.eer_theta,
            eer_crossing_found: curves.crossing_found,
            per_user: trials
                .users
                .iter()
                .zip(&sweep.per_user_f1)
                .map(|(u, &f1)| UserReport {
                    user_id: u.user_id.clone(),
                    f1,
                    genuine_trials: u.genuine.len(),
                    impostor_trials: u.impostor.len(),
                    templates: u.templates,
                })
                .collect(),
            thresholds: grid,
            far_curve: curves.far,
            frr_curve: curves.frr,
            window_sec,
            config: cfg.clone(),
            fold: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Full protocol on the users of `dataset`.
pub fn evaluate(model: &GaitModel, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let trials = build_trials(model, dataset, cfg)?;
    EvalReport::from_trials(&trials, cfg, model.window_sec)
}

/// Users assigned to train, validation and test for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub experiment: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Set when the validation fold wrapped around (experiment 0 validates on the last fold).
    pub validation_wrapped: bool,
}

impl Split {
    pub fn fold_info(&self) -> FoldInfo {
        FoldInfo {
            experiment: self.experiment,
            test: self.test.clone(),
            validation: self.validation.clone(),
            validation_wrapped: self.validation_wrapped,
        }
    }
}

/// Seeded assignment of `n_folds * fold_size` users to folds `t0..`, leaving
/// the rest unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<Vec<String>>,
    pub unassigned: Vec<String>,
}

impl FoldSpec {
    pub fn new(user_ids: &[String], n_folds: usize, fold_size: usize, seed: u64) -> Result<Self> {
        if n_folds < 3 {
            return Err(Error::config("k-fold splitting needs at least 3 folds"));
        }
        let needed = n_folds * fold_size + 2;
        if fold_size == 0 || user_ids.len() < needed {
            return Err(Error::InsufficientData(format!(
                "{n_folds} folds of {fold_size} users need at least {needed} users, {} available",
                user_ids.len()
            )));
        }
        let mut order = user_ids.to_vec();
        GaitRng::seed_from(seed).shuffle(&mut order);
        let assigned = n_folds * fold_size;
        Ok(Self {
            folds: order[..assigned].chunks(fold_size).map(<[String]>::to_vec).collect(),
            unassigned: order[assigned..].to_vec(),
        })
    }

    /// Experiment `k`: test `t_k`, validation `t_(k-1 mod n)`, train everyone else.
    pub fn experiments(&self) -> Vec<Split> {
        let n = self.folds.len();
        (0..n)
            .map(|k| {
                let v = (k + n - 1) % n;
                let train = self
                    .folds
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != k && i != v)
                    .flat_map(|(_, f)| f.iter().cloned())
                    .chain(self.unassigned.iter().cloned())
                    .collect();
                Split {
                    experiment: k,
                    train,
                    validation: self.folds[v].clone(),
                    test: self.folds[k].clone(),
                    validation_wrapped: k == 0,
                }
            })
            .collect()
    }
}

pub fn kfold_splits(user_ids: &[String], n_folds: usize, fold_size: usize, seed: u64) -> Result<Vec<Split>> {
    Ok(FoldSpec::new(user_ids, n_folds, fold_size, seed)?.experiments())
}

/// A single seeded train / validation / test split; validation and test
/// each take a fifth of the users (at least one).
pub fn single_split(user_ids: &[String], seed: u64) -> Result<Split> {
    let n = user_ids.len();
    let held = (n / 5).max(1);
    if n < 2 * held + 2 {
        return Err(Error::InsufficientData(format!(
            "a train/validation/test split needs at least 4 users, {n} available"
        )));
    }
    let mut order = user_ids.to_vec();
    GaitRng::seed_from(seed).shuffle(&mut order);
    Ok(Split {
        experiment: 0,
        test: order[..held].to_vec(),
        validation: order[held..2 * held].to_vec(),
        train: order[2 * held..].to_vec(),
        validation_wrapped: false,
    })
}

/// Writes `user_id,session_id,window_index,e0..e{D-1}` for every
/// non-overlapping window of every session.
pub fn export_embeddings(model: &GaitModel, sessions: &[Arc<Session>], path: &Path) -> Result<()> {
    let dim = model.encoder.config.embedding_dim;
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_owned(), "session_id".to_owned(), "window_index".to_owned()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    out.write_record(&header)?;
    let w = model.window_len();
    for s in sessions {
        let starts = window_starts(s.signal.len(), w, w);
        for (i, e) in model.embed_at(&s.signal, &starts)?.iter().enumerate() {
            let mut row = vec![s.user_id().to_owned(), s.session_id().to_owned(), i.to_string()];
            row.extend(e.values().iter().map(|v| format!("{v:?}")));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}
