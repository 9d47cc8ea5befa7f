//! The `gaitgate` command line.
//!
//! Settings come from three layers: built-in defaults, an optional TOML file
//! given with `--config`, and command-line flags, later layers winning.
//!
//! Exit codes: 0 success or accept, 1 verification reject, 2 invalid
//! arguments or data, 3 I/O failure, 4 numeric failure, 5 unknown identity.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SubsecRound, Utc};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_session_csv, write_session_csv, Dataset};
use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_embeddings, kfold_splits, single_split, EvalConfig, Split};
use crate::identity::{adaptive_step, enroll, enrollment_starts, AdaptiveConfig, AdaptiveEvent, AdaptiveState, IdentityStore};
use crate::model::GaitModel;
use crate::signal::{magnitude, MagnitudeSeries};
use crate::synth::{self, generate_dataset, DatasetSpec, PlannedSegment};
use crate::trainer::{fit_observed, validation_f1, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_UNKNOWN_IDENTITY: i32 = 5;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::BatchElement { source, .. } => exit_code(source),
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) | Error::Parse { .. } => EXIT_IO,
        Error::NonFinite { .. } | Error::DegenerateEmbedding | Error::ZeroVector => EXIT_NUMERIC,
        Error::UnknownUser(_) | Error::UnknownAppearance { .. } => EXIT_UNKNOWN_IDENTITY,
        _ => EXIT_USAGE,
    }
}

/// Settings file layout; every section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub adaptive: AdaptiveConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        self.adaptive.validate()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gaitgate",
    version,
    about = "Gait-based user recognition from accelerometer walking data",
    args_override_self = true
)]
pub struct Cli {
    /// TOML settings file with optional [train], [train.stft], [train.adam], [eval] and [adaptive] tables
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true, env = "GAITGATE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of session CSVs and a manifest
    Synth(SynthArgs),
    /// Generate a synthetic multi-segment walk for one user
    Journey(JourneyArgs),
    /// Train encoders with the contrastive objective
    Train(TrainArgs),
    /// Enroll a walking session as a user template
    Enroll(EnrollArgs),
    /// Verify a walking session against a user's templates
    Verify(VerifyArgs),
    /// Run the per-user evaluation protocol and write a report
    Evaluate(EvaluateArgs),
    /// Stream a walk through adaptive enrollment
    Adaptive(AdaptiveArgs),
    /// Write per-window embeddings of a corpus as CSV
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of users
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub users: u64,
    /// Shoe/surface conditions per user: (shoe1,surface1), (shoe1,surface2), (shoe2,surface1), ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub conditions: u64,
    /// Sessions per user and condition
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub sessions: u64,
    /// Session duration in seconds
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
    /// Master seed; user i is generated from seed + i
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JourneyArgs {
    /// JSON array of segments `{label, shoe, surface, f0_offset, duration_sec}`
    #[arg(long)]
    pub plan: PathBuf,
    /// User seed (master seed + user index for corpus users)
    #[arg(long)]
    pub user_seed: u64,
    /// Noise seed of the walk
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
    /// Output CSV; segment annotations go next to it as `<out>.segments.json`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Number of k-fold experiments; 1 trains on a single train/validation/test split
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    /// Users per fold [default: eval.fold_size]
    #[arg(long)]
    pub fold_size: Option<usize>,
    /// Window length in seconds
    #[arg(long, default_value_t = 10.0)]
    pub window_sec: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batches_per_epoch: usize,
    /// Positive pairs per batch
    #[arg(long, default_value_t = 16)]
    pub pairs: usize,
    /// NT-Xent temperature
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Pixel dropout probability
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Seed of initialization, batches, splits and validation trials
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Model file; with several folds, fold k is written to `<stem>-fold<k>.<ext>`
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log [default: <out>.log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Session CSV with header t,x,y,z
    #[arg(long)]
    pub session: PathBuf,
    /// Sample rate of the session in Hz
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long)]
    pub user: String,
    /// Appearance the session represents (e.g. a pair of shoes)
    #[arg(long, default_value = "default")]
    pub appearance: String,
    /// Identity store JSON; created if missing
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub store: PathBuf,
    /// Accept when the cosine distance to the nearest template is at most this
    #[arg(long, default_value_t = 0.24)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Split file written by `train`; restricts evaluation to the experiment's test users
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Experiment index within the split file
    #[arg(long, default_value_t = 0)]
    pub experiment: usize,
    /// Seed of the probe draws
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Report JSON
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptiveArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Walk CSV of the enrolled user
    #[arg(long)]
    pub journey: PathBuf,
    /// Walks of other people, verified against the user's templates for the FAR
    #[arg(long)]
    pub impostor: Vec<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub user: String,
    /// Cosine distance above which a window counts toward a new template
    #[arg(long, default_value_t = 0.3)]
    pub trigger: f64,
    /// Cosine distance at or below which a window is accepted
    #[arg(long, default_value_t = 0.24)]
    pub verify: f64,
    /// Consecutive above-trigger windows that create a template
    #[arg(long, default_value_t = 3)]
    pub consecutive: usize,
    /// Recent windows considered when picking the most stable one
    #[arg(long, default_value_t = 5)]
    pub span: usize,
    /// JSON-lines event log [default: stdout only]
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Whether `id` was given on the command line (or through its env var).
fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

fn load_session(args: &SessionArgs) -> Result<MagnitudeSeries> {
    magnitude(&read_session_csv(&args.session, args.fs)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match dispatch(&cli, sub) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, m: &ArgMatches) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        // A pool that already exists (e.g. in tests) keeps its size; results are unaffected.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Journey(a) => cmd_journey(a),
        Command::Train(a) => {
            apply_train_flags(&mut cfg, a, m);
            cfg.validate()?;
            cmd_train(&cfg, a)
        }
        Command::Enroll(a) => cmd_enroll(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Evaluate(a) => {
            if explicit(m, "seed") {
                cfg.eval.rng_seed = a.seed;
            }
            cfg.validate()?;
            cmd_evaluate(&cfg, a)
        }
        Command::Adaptive(a) => {
            let ad = &mut cfg.adaptive;
            if explicit(m, "trigger") {
                ad.trigger_threshold = a.trigger;
            }
            if explicit(m, "verify") {
                ad.verify_threshold = a.verify;
            }
            if explicit(m, "consecutive") {
                ad.consecutive_windows = a.consecutive;
            }
            if explicit(m, "span") {
                ad.stability_span = a.span;
            }
            cfg.validate()?;
            cmd_adaptive(&cfg, a)
        }
        Command::Export(a) => {
            let model = GaitModel::load(&a.model)?;
            let data = Dataset::load(&a.data)?;
            export_embeddings(&model, &data.sessions, &a.out)?;
            Ok(EXIT_OK)
        }
    }
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs, m: &ArgMatches) {
    let t = &mut cfg.train;
    if explicit(m, "window_sec") {
        t.window_sec = a.window_sec;
    }
    if explicit(m, "epochs") {
        t.epochs = a.epochs;
    }
    if explicit(m, "batches_per_epoch") {
        t.batches_per_epoch = a.batches_per_epoch;
    }
    if explicit(m, "pairs") {
        t.pairs_per_batch = a.pairs;
    }
    if explicit(m, "temperature") {
        t.temperature = a.temperature;
    }
    if explicit(m, "learning_rate") {
        t.adam.learning_rate = a.learning_rate;
    }
    if explicit(m, "dropout") {
        t.dropout_p = a.dropout;
    }
    if explicit(m, "seed") {
        t.rng_seed = a.seed;
        cfg.eval.rng_seed = a.seed;
    }
    if let Some(size) = a.fold_size {
        cfg.eval.fold_size = size;
    }
    cfg.eval.folds = a.folds;
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let spec = DatasetSpec {
        n_users: a.users as usize,
        sessions_per_user: a.sessions as usize,
        conditions: a.conditions as usize,
        duration_sec: a.duration,
        master_seed: a.seed,
        fs: a.fs,
    };
    spec.validate()?;
    let manifest = generate_dataset(&spec, &a.out)?;
    print_json(&serde_json::json!({
        "sessions": manifest.len(),
        "users": spec.n_users,
        "manifest": a.out.join(synth::MANIFEST_FILE),
    }))?;
    Ok(EXIT_OK)
}

fn cmd_journey(a: &JourneyArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.plan)?;
    let plan: Vec<PlannedSegment> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.plan.clone(),
        message: e.to_string(),
    })?;
    let profile = synth::generate_profile(a.user_seed);
    let (series, segments) = synth::synth_journey(&profile, &synth::plan_journey(a.user_seed, &plan), a.fs, a.seed)?;
    write_session_csv(&a.out, &series)?;
    std::fs::write(segments_path(&a.out), serde_json::to_string_pretty(&segments)?)?;
    print_json(&serde_json::json!({ "samples": series.len(), "segments": segments }))?;
    Ok(EXIT_OK)
}

fn segments_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".segments.json");
    PathBuf::from(s)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fold_model_path(out: &Path, fold: usize, folds: usize) -> PathBuf {
    if folds == 1 {
        return out.to_owned();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-fold{fold}.{}", ext.to_string_lossy()),
        None => format!("{stem}-fold{fold}"),
    };
    out.with_file_name(name)
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<i32> {
    if a.folds == 0 {
        return Err(Error::config("--folds must be at least 1"));
    }
    let data = Dataset::load(&a.data)?;
    let fs = data.sessions.first().map(|s| s.signal.fs).ok_or(Error::EmptyInput)?;
    // Reject windows that do not fit the STFT before any work starts.
    cfg.train.encoder_config(fs)?;
    let users = data.user_ids();
    let splits: Vec<Split> = if a.folds == 1 {
        vec![single_split(&users, cfg.train.rng_seed)?]
    } else {
        kfold_splits(&users, a.folds, cfg.eval.fold_size, cfg.train.rng_seed)?
    };
    std::fs::write(with_suffix(&a.out, ".splits.json"), serde_json::to_string_pretty(&splits)?)?;

    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut summary = Vec::new();
    for split in &splits {
        let train = data.subset(&split.train);
        let val = data.subset(&split.validation);
        let mut io_err = None;
        let outcome = fit_observed(
            &train,
            &cfg.train,
            split.experiment,
            |model| validation_f1(model, &val, &cfg.eval),
            |line| {
                let res = serde_json::to_string(line)
                    .map_err(Error::from)
                    .and_then(|s| writeln!(log, "{s}").and_then(|_| log.flush()).map_err(Error::from));
                if let Err(e) = res {
                    io_err.get_or_insert(e);
                }
            },
        )?;
        if let Some(e) = io_err {
            return Err(e);
        }
        let path = fold_model_path(&a.out, split.experiment, splits.len());
        outcome.model.save(&path)?;
        summary.push(serde_json::json!({
            "fold": split.experiment,
            "model": path,
            "best_epoch": outcome.best_epoch,
            "val_f1": outcome.log[outcome.best_epoch - 1].val_f1,
        }));
    }
    print_json(&serde_json::json!({ "folds": summary, "log": log_path }))?;
    Ok(EXIT_OK)
}

fn cmd_enroll(a: &EnrollArgs) -> Result<i32> {
    let model = GaitModel::load(&a.model)?;
    let signal = load_session(&a.session)?;
    let mut store = IdentityStore::load_or_default(&a.store)?;
    let template = enroll(&model, &signal, &a.user, &a.appearance, &mut store, Utc::now().trunc_subsecs(0))?;
    store.save(&a.store)?;
    print_json(&serde_json::json!({
        "user_id": a.user,
        "appearance_id": template.appearance_id,
        "sample_count": template.sample_count,
    }))?;
    Ok(EXIT_OK)
}

/// Normalized mean embedding of a session's windows at 50% overlap.
pub fn session_probe(model: &GaitModel, signal: &MagnitudeSeries) -> Result<EmbeddingVector> {
    let starts = enrollment_starts(signal.len(), model.window_len());
    if starts.is_empty() {
        return Err(Error::SessionTooShort {
            required_sec: model.window_sec,
            provided_sec: signal.duration_sec(),
        });
    }
    let embs = model.embed_at(signal, &starts)?;
    let mut mean = vec![0.0; embs[0].dim()];
    for e in &embs {
        mean.iter_mut().zip(e.values()).for_each(|(m, v)| *m += v);
    }
    EmbeddingVector::normalize(&mean)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let store = IdentityStore::load(&a.store)?;
    if store.get(&a.user).is_none() {
        return Err(Error::UnknownUser(a.user.clone()));
    }
    let model = GaitModel::load(&a.model)?;
    let probe = session_probe(&model, &load_session(&a.session)?)?;
    let v = store.verify(&a.user, probe.values(), a.threshold)?;
    print_json(&v)?;
    Ok(if v.accept { EXIT_OK } else { EXIT_REJECT })
}

fn cmd_evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> Result<i32> {
    let model = GaitModel::load(&a.model)?;
    let data = Dataset::load(&a.data)?;
    let (users, fold) = match &a.split {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let splits: Vec<Split> = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let split = splits
                .into_iter()
                .find(|s| s.experiment == a.experiment)
                .ok_or_else(|| Error::config(format!("split file has no experiment {}", a.experiment)))?;
            (split.test.clone(), Some(split.fold_info()))
        }
        None => (data.user_ids(), None),
    };
    let mut report = evaluate(&model, &data.subset(&users), &cfg.eval)?;
    report.fold = fold;
    report.save(&a.report)?;
    print_json(&serde_json::json!({
        "mean_f1": report.mean_f1,
        "best_theta": report.best_theta,
        "eer": report.eer,
        "eer_theta": report.eer_theta,
    }))?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct WindowEvent<'a> {
    window: usize,
    t_start: f64,
    accept: bool,
    #[serde(flatten)]
    outcome: &'a crate::identity::AdaptiveOutcome,
}

fn cmd_adaptive(cfg: &RunConfig, a: &AdaptiveArgs) -> Result<i32> {
    let ad = cfg.adaptive;
    let model = GaitModel::load(&a.model)?;
    let mut store = IdentityStore::load(&a.store)?;
    if store.get(&a.user).is_none() {
        return Err(Error::UnknownUser(a.user.clone()));
    }
    let signal = magnitude(&read_session_csv(&a.journey, a.fs)?)?;
    let starts = enrollment_starts(signal.len(), model.window_len());
    let embeddings = model.embed_at(&signal, &starts)?;
    let mut sink: Box<dyn Write> = match &a.events {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::sink()),
    };
    let mut state = AdaptiveState::new();
    let now = Utc::now().trunc_subsecs(0);
    let mut accepted = 0usize;
    for (i, (e, &s)) in embeddings.iter().zip(&starts).enumerate() {
        let accept = store.verify(&a.user, e.values(), ad.verify_threshold)?.accept;
        accepted += accept as usize;
        let outcome = adaptive_step(&mut state, &mut store, &a.user, e, true, &ad, now)?;
        let line = serde_json::to_string(&WindowEvent {
            window: i,
            t_start: s as f64 / signal.fs,
            accept,
            outcome: &outcome,
        })?;
        writeln!(sink, "{line}")?;
        if let AdaptiveEvent::Enrolled { .. } = outcome.event {
            println!("{line}");
        }
    }
    sink.flush()?;
    store.save(&a.store)?;

    let mut impostor_windows = 0usize;
    let mut impostor_accepts = 0usize;
    for path in &a.impostor {
        let sig = magnitude(&read_session_csv(path, a.fs)?)?;
        let st = enrollment_starts(sig.len(), model.window_len());
        for e in model.embed_at(&sig, &st)? {
            impostor_windows += 1;
            impostor_accepts += store.verify(&a.user, e.values(), ad.verify_threshold)?.accept as usize;
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { None } else { Some(n as f64 / d as f64) };
    print_json(&serde_json::json!({
        "windows": embeddings.len(),
        "templates_added": state.added,
        "recall_during_walk": ratio(accepted, embeddings.len()),
        "impostor_windows": impostor_windows,
        "far": ratio(impostor_accepts, impostor_windows),
    }))?;
    Ok(EXIT_OK)
}
