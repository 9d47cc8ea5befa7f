#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use gaitgate::dataset::{Dataset, Session};
use gaitgate::encoder::{forward_batch, init_params, EncoderConfig, ParameterSet};
use gaitgate::eval::{
    build_trials_with, single_split, EvalConfig, EvalReport, Split, UserPlan, UserScores,
};
use gaitgate::identity::{
    adaptive_step, enroll, enrollment_starts, AdaptiveConfig, AdaptiveState, IdentityStore,
};
use gaitgate::model::GaitModel;
use gaitgate::rng::GaitRng;
use gaitgate::signal::{hann, magnitude, MagnitudeSeries, Spectrogram, StftConfig};
use gaitgate::synth::{
    corpus_session, generate_profile, plan_journey, synth_journey, DatasetSpec, PlannedSegment,
};
use gaitgate::trainer::{
    fit, loss_gradients, nt_xent_loss, ContrastiveBatch, FitOutcome, Pairing, TrainConfig,
};
use ndarray::Array2;

pub const SEED: u64 = 42;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gaitgate")
}

pub fn gaitgate(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("GAITGATE_THREADS")
        .output()
        .expect("spawn gaitgate")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn corpus_spec(n_users: usize, conditions: usize, duration_sec: f64) -> DatasetSpec {
    DatasetSpec {
        n_users,
        sessions_per_user: 1,
        conditions,
        duration_sec,
        master_seed: SEED,
        fs: 100.0,
    }
}

/// In-memory corpus, identical to what `synth` writes for the same spec.
pub fn corpus(n_users: usize, conditions: usize, duration_sec: f64) -> Dataset {
    let spec = corpus_spec(n_users, conditions, duration_sec);
    let mut sessions = Vec::new();
    for u in 0..n_users {
        for c in 0..conditions {
            let (entry, series) = corpus_session(&spec, u, c, 0).unwrap();
            sessions.push(Session::from_accel(entry, &series).unwrap());
        }
    }
    Dataset::new(sessions)
}

/// 20 users walking 600 s in shoe 1 on both surfaces.
pub fn recognition_corpus() -> Dataset {
    corpus(20, 2, 600.0)
}

/// The same users with all four shoe/surface conditions.
pub fn appearance_corpus() -> Dataset {
    corpus(20, 4, 600.0)
}

pub fn recognition_split(dataset: &Dataset) -> Split {
    single_split(&dataset.user_ids(), SEED).unwrap()
}

/// Trains with the default configuration at `window_sec` on the recognition split.
pub fn train_recognition(dataset: &Dataset, split: &Split, window_sec: f64) -> FitOutcome {
    let cfg = TrainConfig {
        window_sec,
        ..TrainConfig::default()
    };
    fit(
        &dataset.subset(&split.train),
        &dataset.subset(&split.validation),
        &cfg,
        &EvalConfig::default(),
        0,
    )
    .unwrap()
}

// ---------------------------------------------------------------- DSP oracle

/// Per-frame DFT evaluated term by term.
pub fn naive_power(signal: &[f64], cfg: &StftConfig) -> Array2<f64> {
    let n = cfg.fft_len;
    let w = hann(cfg.frame_len);
    let frames = (signal.len() - cfg.frame_len) / cfg.hop + 1;
    let bins = n / 2 + 1;
    let mut out = Array2::zeros((bins, frames));
    for f in 0..frames {
        let frame = &signal[f * cfg.hop..f * cfg.hop + cfg.frame_len];
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, (&x, &wj)) in frame.iter().zip(&w).enumerate() {
                let angle = -std::f64::consts::TAU * ((k * j) % n) as f64 / n as f64;
                re += x * wj * angle.cos();
                im += x * wj * angle.sin();
            }
            out[[k, f]] = re * re + im * im;
        }
    }
    out
}

/// Seeded accelerometer-like magnitude window.
pub fn random_window(rng: &mut GaitRng, len: usize) -> MagnitudeSeries {
    let values = (0..len)
        .map(|_| (9.81 + rng.normal()).abs() + 0.5 * rng.uniform())
        .collect();
    MagnitudeSeries { values, fs: 100.0 }
}

/// Largest elementwise `|a - b| / max(|b|, 1)` over the array.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

// ----------------------------------------------------------- gradient check

pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters: usize,
}

fn reduced_encoder() -> EncoderConfig {
    EncoderConfig {
        input_shape: (9, 4),
        conv_channels: vec![2, 2],
        embedding_dim: 4,
        init_seed: 7,
    }
}

/// Analytic NT-Xent gradients against central differences with step `h` on
/// the 9x4 / [2, 2] / D=4 encoder and two positive pairs.
pub fn gradient_check(h: f64, seed: u64) -> GradientCheck {
    let cfg = reduced_encoder();
    let mut params = init_params(&cfg).unwrap();
    let mut rng = GaitRng::seed_from(seed);
    // Non-zero biases put units on both sides of their ReLU.
    for t in params.tensors.iter_mut().filter(|t| t.name.ends_with("bias")) {
        t.data.iter_mut().for_each(|v| *v = 0.1 * rng.normal());
    }
    let specs: Vec<Spectrogram> = (0..4)
        .map(|_| Spectrogram {
            data: Array2::from_shape_fn(cfg.input_shape, |_| 5.0 * rng.normal()),
        })
        .collect();
    let batch = ContrastiveBatch {
        specs,
        pairing: Pairing::adjacent(2),
        sources: Vec::new(),
    };
    let tau = 0.1;
    let (_, grads) = loss_gradients(&params, &cfg, &batch, tau).unwrap();
    let loss_at = |p: &ParameterSet| {
        let e = forward_batch(p, &cfg, &batch.specs).unwrap();
        nt_xent_loss(&e, &batch.pairing, tau).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for ti in 0..params.tensors.len() {
        for j in 0..params.tensors[ti].data.len() {
            let orig = params.tensors[ti].data[j];
            params.tensors[ti].data[j] = orig + h;
            let up = loss_at(&params);
            params.tensors[ti].data[j] = orig - h;
            let down = loss_at(&params);
            params.tensors[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors[ti].data[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
            count += 1;
        }
    }
    GradientCheck {
        max_relative_error: worst,
        parameters: count,
    }
}

// ------------------------------------------------------------- metric oracle

fn oracle_f1(s: &UserScores, theta: f64) -> f64 {
    let tp = s.genuine.iter().filter(|&&d| d <= theta).count();
    let fp = s.impostor.iter().filter(|&&d| d <= theta).count();
    let fn_ = s.genuine.len() - tp;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn oracle_mean_f1(scores: &[UserScores], theta: f64) -> f64 {
    scores.iter().map(|s| oracle_f1(s, theta)).sum::<f64>() / scores.len() as f64
}

/// Best mean F1 over every threshold in `[0, max]`: the curve only changes
/// at observed distances, so those and 0 are all the candidates there are.
pub fn brute_force_best_f1(scores: &[UserScores], max: f64) -> (f64, f64) {
    let mut candidates: Vec<f64> = scores
        .iter()
        .flat_map(|s| s.genuine.iter().chain(&s.impostor))
        .cloned()
        .filter(|&d| d <= max)
        .collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (oracle_mean_f1(scores, candidates[0]), candidates[0]);
    for &t in &candidates[1..] {
        let f = oracle_mean_f1(scores, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best
}

/// EER by enumerating every threshold of a `step` grid over `[0, 1]`: FAR
/// and FRR averaged per user, the EER where the curves meet (linear between
/// the two grid points bracketing the sign change of FAR - FRR), or where
/// they come closest if they never meet.
pub fn brute_force_eer(scores: &[UserScores], step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    let u = scores.len() as f64;
    let rates: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let t = i as f64 * step;
            let far = scores
                .iter()
                .map(|s| s.impostor.iter().filter(|&&d| d <= t).count() as f64 / s.impostor.len() as f64)
                .sum::<f64>()
                / u;
            let frr = scores
                .iter()
                .map(|s| s.genuine.iter().filter(|&&d| d > t).count() as f64 / s.genuine.len() as f64)
                .sum::<f64>()
                / u;
            (far, frr)
        })
        .collect();
    for i in 0..rates.len() {
        let (far, frr) = rates[i];
        if far == frr {
            return far;
        }
        if let Some(&(far2, frr2)) = rates.get(i + 1) {
            let (d1, d2) = (far - frr, far2 - frr2);
            if d1 < 0.0 && d2 > 0.0 {
                let t = -d1 / (d2 - d1);
                return far + t * (far2 - far);
            }
        }
    }
    let (far, frr) = rates
        .iter()
        .min_by(|a, b| (a.0 - a.1).abs().total_cmp(&(b.0 - b.1).abs()))
        .copied()
        .unwrap();
    (far + frr) / 2.0
}

fn user(genuine: Vec<f64>, impostor: Vec<f64>) -> UserScores {
    UserScores { genuine, impostor }
}

/// Evenly spaced distances `lo, lo + step, ...`, `n` of them.
fn ramp(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Hand-built trial sets. Distances sit halfway between points of the
/// 0.005 evaluation grid so no comparison depends on rounding.
pub fn toy_trial_sets() -> Vec<(&'static str, Vec<UserScores>)> {
    vec![
        (
            "separated",
            vec![
                user(ramp(0.0525, 0.01, 20), ramp(0.5025, 0.01, 30)),
                user(ramp(0.1025, 0.005, 30), ramp(0.4525, 0.02, 20)),
                user(vec![0.2025; 5], vec![0.7025; 5]),
            ],
        ),
        (
            "overlapping",
            vec![
                user(ramp(0.0525, 0.015, 40), ramp(0.3025, 0.015, 45)),
                user(ramp(0.1025, 0.01, 40), ramp(0.2525, 0.01, 45)),
            ],
        ),
        (
            "uneven",
            vec![
                user(vec![0.1025, 0.1525, 0.3525, 0.6025], ramp(0.2025, 0.05, 12)),
                user(ramp(0.0225, 0.02, 25), vec![0.0825, 0.4025, 0.4525, 0.9025]),
                user(vec![0.4525; 3], ramp(0.3025, 0.025, 20)),
            ],
        ),
    ]
}

// ------------------------------------------------------ alternate appearance

/// Test-user plans for the shoe experiment: enroll shoe 1 (surface 1), and
/// with `dual` also shoe 2 (surface 1); probe the shoe 2 sessions.
pub fn appearance_plans(dataset: &Dataset, split: &Split, dual: bool) -> Vec<UserPlan> {
    split
        .test
        .iter()
        .map(|u| {
            let s = dataset.sessions_of(u);
            assert_eq!(s.len(), 4, "user {u} needs all four conditions");
            let mut enroll = vec![("shoe1".to_owned(), s[0].clone())];
            if dual {
                enroll.push(("shoe2".to_owned(), s[2].clone()));
            }
            UserPlan {
                user_id: u.clone(),
                enroll,
                probe_sessions: vec![s[2].clone(), s[3].clone()],
            }
        })
        .collect()
}

pub fn appearance_f1(model: &GaitModel, dataset: &Dataset, split: &Split, dual: bool) -> EvalReport {
    let cfg = EvalConfig::default();
    let trials = build_trials_with(model, &appearance_plans(dataset, split, dual), &cfg).unwrap();
    EvalReport::from_trials(&trials, &cfg, model.window_sec).unwrap()
}

// ------------------------------------------------------- adaptive enrollment

pub const JOURNEY_SEGMENT_SEC: f64 = 120.0;
pub const JOURNEY_PACE_OFFSET: f64 = 0.5;

/// Indoors, then new shoes, then grass, then a brisk decline.
pub fn three_shift_plan() -> Vec<PlannedSegment> {
    let seg = |label: &str, shoe, surface, f0_offset| PlannedSegment {
        label: label.into(),
        shoe,
        surface,
        f0_offset,
        duration_sec: JOURNEY_SEGMENT_SEC,
    };
    vec![
        seg("indoor", 1, 1, 0.0),
        seg("other-shoes", 2, 1, 0.0),
        seg("grass", 2, 2, 0.0),
        seg("brisk-decline", 2, 2, JOURNEY_PACE_OFFSET),
    ]
}

pub fn user_seed(user_id: &str) -> u64 {
    SEED + user_id.trim_start_matches("user").parse::<u64>().unwrap()
}

/// Embeddings of a walk along `plan` at 50% window overlap.
pub fn journey_embeddings(
    model: &GaitModel,
    user_id: &str,
    plan: &[PlannedSegment],
    walk_seed: u64,
) -> Vec<gaitgate::encoder::EmbeddingVector> {
    let us = user_seed(user_id);
    let (series, _) = synth_journey(&generate_profile(us), &plan_journey(us, plan), 100.0, walk_seed).unwrap();
    let m = magnitude(&series).unwrap();
    model.embed_at(&m, &enrollment_starts(m.len(), model.window_len())).unwrap()
}

#[derive(Debug, Default)]
pub struct AdaptiveSummary {
    pub templates_added: usize,
    pub targets_adapted: usize,
    pub targets: usize,
    pub repeat_accepted: usize,
    pub repeat_windows: usize,
    pub impostor_accepted: usize,
    pub impostor_windows: usize,
}

impl AdaptiveSummary {
    pub fn recall(&self) -> f64 {
        self.repeat_accepted as f64 / self.repeat_windows as f64
    }

    pub fn far(&self) -> f64 {
        self.impostor_accepted as f64 / self.impostor_windows as f64
    }
}

/// Every test user in turn enrolls from the start of their first session,
/// walks the journey with adaptive enrollment, then walks it again under
/// verification; the other test users walk it as impostors.
pub fn adaptive_experiment(model: &GaitModel, dataset: &Dataset, split: &Split) -> AdaptiveSummary {
    let cfg = AdaptiveConfig::default();
    let plan = three_shift_plan();
    let at = chrono::DateTime::from_timestamp(0, 0).unwrap();
    let span = EvalConfig::default().enroll_span(model.window_len());
    let mut out = AdaptiveSummary::default();
    for target in &split.test {
        let session = dataset.sessions_of(target)[0].clone();
        let mut store = IdentityStore::new();
        enroll(model, &session.signal.slice(0, span), target, "default", &mut store, at).unwrap();
        let mut state = AdaptiveState::new();
        for e in journey_embeddings(model, target, &plan, 1) {
            adaptive_step(&mut state, &mut store, target, &e, true, &cfg, at).unwrap();
        }
        out.targets += 1;
        out.templates_added += state.added.len();
        out.targets_adapted += usize::from(!state.added.is_empty());
        for e in journey_embeddings(model, target, &plan, 2) {
            out.repeat_windows += 1;
            out.repeat_accepted += usize::from(store.verify(target, e.values(), cfg.verify_threshold).unwrap().accept);
        }
        for other in split.test.iter().filter(|o| *o != target) {
            for e in journey_embeddings(model, other, &plan, 3) {
                out.impostor_windows += 1;
                out.impostor_accepted +=
                    usize::from(store.verify(target, e.values(), cfg.verify_threshold).unwrap().accept);
            }
        }
    }
    out
}

// ---------------------------------------------------------------- protocol

pub fn disjoint(sets: &[&[String]]) -> bool {
    let mut seen = BTreeSet::new();
    sets.iter().flat_map(|s| s.iter()).all(|u| seen.insert(u.clone()))
}

/// Untrained model with the default architecture; enough for protocol counts.
pub fn untrained_model(window_sec: f64) -> GaitModel {
    let cfg = TrainConfig {
        window_sec,
        ..TrainConfig::default()
    };
    let enc = gaitgate::encoder::Encoder::init(cfg.encoder_config(100.0).unwrap()).unwrap();
    GaitModel::new(enc, cfg.stft, window_sec, 100.0).unwrap()
}
