//! Enrollment, verification and adaptive enrollment.
//!
//! A user owns one template per appearance (e.g. a pair of shoes). A probe
//! is accepted when its cosine distance to the nearest template is at most
//! the threshold. Adaptive enrollment watches a stream of in-ear walking
//! windows and adds a template once the distance to every existing one has
//! stayed above a trigger threshold for several consecutive windows.

use std::collections::VecDeque;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::model::GaitModel;
use crate::signal::{window_starts, window_stride, MagnitudeSeries};
use crate::trainer::cosine_similarity;

pub const STORE_VERSION: u32 = 1;
/// Shortest walking session accepted for enrollment.
pub const MIN_ENROLL_SEC: f64 = 10.0;
pub const ENROLL_OVERLAP: f64 = 0.5;

/// `1 - cosine similarity`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

mod f32_values {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::encoder::EmbeddingVector;

    pub fn serialize<S: Serializer>(e: &EmbeddingVector, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<f32> = e.values().iter().map(|&x| x as f32).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EmbeddingVector, D::Error> {
        let v = Vec::<f32>::deserialize(d)?;
        Ok(EmbeddingVector::from_unit(v.into_iter().map(f64::from).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub appearance_id: String,
    /// Unit norm, held at f32 precision so a stored template reproduces
    /// the in-memory one exactly.
    #[serde(with = "f32_values")]
    pub embedding: EmbeddingVector,
    pub sample_count: u64,
    pub created_at: DateTime<Utc>,
    /// Un-normalized running mean of the contributing embeddings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_mean: Option<Vec<f64>>,
}

impl Template {
    /// Normalized mean of `embeddings`.
    pub fn from_embeddings(
        appearance_id: impl Into<String>,
        embeddings: &[EmbeddingVector],
        created_at: DateTime<Utc>,
    ) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::EmptyInput)?;
        let mut mean = vec![0.0; first.dim()];
        for e in embeddings {
            if e.dim() != mean.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![mean.len()],
                    got: vec![e.dim()],
                });
            }
            mean.iter_mut().zip(e.values()).for_each(|(m, v)| *m += v);
        }
        let n = embeddings.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Self {
            appearance_id: appearance_id.into(),
            embedding: EmbeddingVector::normalize(&mean)?.to_f32_precision()?,
            sample_count: embeddings.len() as u64,
            created_at,
            raw_mean: Some(mean),
        })
    }

    pub fn distance(&self, probe: &[f64]) -> Result<f64> {
        cosine_distance(self.embedding.values(), probe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub user_id: String,
    pub templates: Vec<Template>,
}

impl IdentityRecord {
    pub fn template(&self, appearance_id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.appearance_id == appearance_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub accept: bool,
    pub distance: f64,
    pub matched_appearance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityStore {
    pub version: u32,
    pub users: Vec<IdentityRecord>,
}

impl Default for IdentityStore {
    fn default() -> Self {
        Self {
            version: STORE_VERSION,
            users: Vec::new(),
        }
    }
}

impl IdentityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, user_id: &str) -> Option<&IdentityRecord> {
        self.users.iter().find(|r| r.user_id == user_id)
    }

    fn record(&self, user_id: &str) -> Result<&IdentityRecord> {
        self.get(user_id).ok_or_else(|| Error::UnknownUser(user_id.to_owned()))
    }

    fn record_mut(&mut self, user_id: &str) -> Result<&mut IdentityRecord> {
        self.users
            .iter_mut()
            .find(|r| r.user_id == user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))
    }

    /// Adds `template` to the user, replacing one with the same appearance id.
    pub fn upsert(&mut self, user_id: &str, template: Template) {
        match self.users.iter_mut().find(|r| r.user_id == user_id) {
            Some(record) => match record
                .templates
                .iter_mut()
                .find(|t| t.appearance_id == template.appearance_id)
            {
                Some(slot) => *slot = template,
                None => record.templates.push(template),
            },
            None => self.users.push(IdentityRecord {
                user_id: user_id.to_owned(),
                templates: vec![template],
            }),
        }
    }

    /// Nearest template of `user_id`; accepted iff its distance is at most `threshold`.
    pub fn verify(&self, user_id: &str, probe: &[f64], threshold: f64) -> Result<Verification> {
        let record = self.record(user_id)?;
        let mut best: Option<(f64, &str)> = None;
        for t in &record.templates {
            let d = t.distance(probe)?;
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, &t.appearance_id));
            }
        }
        let (distance, id) = best.ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
        Ok(Verification {
            accept: distance <= threshold,
            distance,
            matched_appearance: id.to_owned(),
        })
    }

    /// Folds an accepted embedding into an existing template as a running mean.
    pub fn refine_template(
        &mut self,
        user_id: &str,
        appearance_id: &str,
        embedding: &[f64],
        verify_threshold: f64,
    ) -> Result<Template> {
        let record = self.record_mut(user_id)?;
        let template = record
            .templates
            .iter_mut()
            .find(|t| t.appearance_id == appearance_id)
            .ok_or_else(|| Error::UnknownAppearance {
                user_id: user_id.to_owned(),
                appearance_id: appearance_id.to_owned(),
            })?;
        let distance = template.distance(embedding)?;
        if distance > verify_threshold {
            return Err(Error::RefinementRejected {
                distance,
                threshold: verify_threshold,
            });
        }
        let n = template.sample_count as f64;
        let raw = template
            .raw_mean
            .clone()
            .unwrap_or_else(|| template.embedding.values().to_vec());
        let updated: Vec<f64> = raw
            .iter()
            .zip(embedding)
            .map(|(r, e)| (r * n + e) / (n + 1.0))
            .collect();
        template.embedding = EmbeddingVector::normalize(&updated)?.to_f32_precision()?;
        template.raw_mean = Some(updated);
        template.sample_count += 1;
        Ok(template.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != STORE_VERSION {
            return Err(Error::config(format!(
                "identity store version {} is not supported (expected {STORE_VERSION})",
                self.version
            )));
        }
        for (i, r) in self.users.iter().enumerate() {
            if self.users[..i].iter().any(|o| o.user_id == r.user_id) {
                return Err(Error::config(format!("duplicate user {:?}", r.user_id)));
            }
            if r.templates.is_empty() {
                return Err(Error::config(format!("user {:?} has no templates", r.user_id)));
            }
            for (j, t) in r.templates.iter().enumerate() {
                if r.templates[..j].iter().any(|o| o.appearance_id == t.appearance_id) {
                    return Err(Error::config(format!(
                        "user {:?} has duplicate appearance {:?}",
                        r.user_id, t.appearance_id
                    )));
                }
                if t.sample_count == 0 || (t.embedding.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::config(format!(
                        "template {:?} of user {:?} is not a unit vector with samples",
                        t.appearance_id, r.user_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let store: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        store.validate()?;
        Ok(store)
    }

    /// Loads `path`, or starts an empty store if the file does not exist.
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Window starts used to enroll from a session: 50% overlap over the whole session.
pub fn enrollment_starts(signal_len: usize, window_len: usize) -> Vec<usize> {
    window_starts(signal_len, window_len, window_stride(window_len, ENROLL_OVERLAP))
}

/// Enrolls `signal` as appearance `appearance_id` of `user_id`.
pub fn enroll(
    model: &GaitModel,
    signal: &MagnitudeSeries,
    user_id: &str,
    appearance_id: &str,
    store: &mut IdentityStore,
    created_at: DateTime<Utc>,
) -> Result<Template> {
    let required_sec = MIN_ENROLL_SEC.max(model.window_sec);
    let provided_sec = signal.duration_sec();
    if provided_sec < required_sec || signal.len() < model.window_len() {
        return Err(Error::SessionTooShort {
            required_sec,
            provided_sec,
        });
    }
    let starts = enrollment_starts(signal.len(), model.window_len());
    let embeddings = model.embed_at(signal, &starts)?;
    let template = Template::from_embeddings(appearance_id, &embeddings, created_at)?;
    store.upsert(user_id, template.clone());
    Ok(template)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub trigger_threshold: f64,
    pub verify_threshold: f64,
    pub consecutive_windows: usize,
    pub stability_span: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            trigger_threshold: 0.3,
            verify_threshold: 0.24,
            consecutive_windows: 3,
            stability_span: 5,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let (v, t) = (self.verify_threshold, self.trigger_threshold);
        if !(0.0 < v && v <= t && t < 2.0) {
            return Err(Error::config(format!(
                "thresholds must satisfy 0 < verify ({v}) <= trigger ({t}) < 2"
            )));
        }
        if self.consecutive_windows == 0 || self.stability_span == 0 {
            return Err(Error::config(
                "consecutive_windows and stability_span must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Per-stream adaptive enrollment state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptiveState {
    pub consecutive_above: usize,
    /// Most recent above-trigger windows with their distances.
    pub buffer: VecDeque<(EmbeddingVector, f64)>,
    pub added: Vec<String>,
}

impl AdaptiveState {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self) {
        self.consecutive_above = 0;
        self.buffer.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AdaptiveEvent {
    None,
    Counted,
    Enrolled { appearance_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveOutcome {
    #[serde(flatten)]
    pub event: AdaptiveEvent,
    pub distance: f64,
}

/// Index of the buffered window with the smallest mean distance to the others.
fn most_stable(buffer: &VecDeque<(EmbeddingVector, f64)>) -> Result<usize> {
    if buffer.len() == 1 {
        return Ok(0);
    }
    let mut best = (f64::INFINITY, 0);
    for (i, (a, _)) in buffer.iter().enumerate() {
        let mut total = 0.0;
        for (j, (b, _)) in buffer.iter().enumerate() {
            if i != j {
                total += cosine_distance(a.values(), b.values())?;
            }
        }
        let mean = total / (buffer.len() - 1) as f64;
        if mean < best.0 {
            best = (mean, i);
        }
    }
    Ok(best.1)
}

/// Processes one window of a walking stream.
pub fn adaptive_step(
    state: &mut AdaptiveState,
    store: &mut IdentityStore,
    user_id: &str,
    window: &EmbeddingVector,
    in_ear: bool,
    cfg: &AdaptiveConfig,
    now: DateTime<Utc>,
) -> Result<AdaptiveOutcome> {
    let distance = store.verify(user_id, window.values(), cfg.trigger_threshold)?.distance;
    let outcome = |event| AdaptiveOutcome { event, distance };
    if !in_ear || distance <= cfg.trigger_threshold {
        state.reset();
        return Ok(outcome(AdaptiveEvent::None));
    }
    state.consecutive_above += 1;
    state.buffer.push_back((window.clone(), distance));
    while state.buffer.len() > cfg.stability_span {
        state.buffer.pop_front();
    }
    if state.consecutive_above < cfg.consecutive_windows {
        return Ok(outcome(AdaptiveEvent::Counted));
    }
    let chosen = state.buffer[most_stable(&state.buffer)?].0.clone();
    let record = store.record(user_id)?;
    let stamp = now.to_rfc3339_opts(SecondsFormat::Secs, true);
    let mut counter = state.added.len() + 1;
    let mut appearance_id = format!("adaptive-{stamp}-{counter}");
    while record.template(&appearance_id).is_some() {
        counter += 1;
        appearance_id = format!("adaptive-{stamp}-{counter}");
    }
    let template = Template::from_embeddings(appearance_id.clone(), &[chosen], now)?;
    store.upsert(user_id, template);
    state.added.push(appearance_id.clone());
    state.reset();
    Ok(outcome(AdaptiveEvent::Enrolled { appearance_id }))
}
