//! Deterministic synthetic gait corpora.
//!
//! Each user walks with a step frequency `f0` and five harmonics per axis:
//!
//! ```text
//! axis(t) = gravity + sum_k a[k] sin(2 pi k phase(t) + phi[k]) + N(0, sigma^2)
//! ```
//!
//! where `phase` integrates the instantaneous step frequency. Condition
//! modifiers (shoes, surfaces, pace) perturb the amplitudes, the step
//! frequency and the noise level. All randomness flows from xoshiro256++
//! streams seeded from the user seed, so a corpus is a pure function of its
//! master seed.
//!
//! Profile distributions:
//!
//! | parameter      | draw                                                        |
//! |----------------|-------------------------------------------------------------|
//! | `f0`           | `N(1.9, 0.25)` Hz clamped to `[1.5, 2.3]`                   |
//! | `a[k][axis]`   | `BASE_AMPLITUDE[k] * AXIS_WEIGHT[axis] * U(0.4, 1.6)` g     |
//! | `phi[k][axis]` | `U(0, 2 pi)`                                                |
//! | `sigma`        | `U(0.01, 0.04)` g                                           |
//! | gravity        | unit vector tilted by pitch, roll `~ U(-0.3, 0.3)` rad      |

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, write_session_csv, ManifestEntry};
use crate::error::{Error, Result};
use crate::rng::GaitRng;
use crate::signal::{AccelSample, AccelSeries};

pub const HARMONICS: usize = 5;
pub const AXES: usize = 3;
pub const BASE_AMPLITUDE: [f64; HARMONICS] = [0.30, 0.18, 0.10, 0.06, 0.04];
pub const AXIS_WEIGHT: [f64; AXES] = [0.5, 0.4, 1.0];
pub const F0_RANGE: (f64, f64) = (1.5, 2.3);
pub const MODIFIED_F0_RANGE: (f64, f64) = (1.0, 3.0);
/// Relative amplitude perturbation of a shoe change.
pub const SHOE_STRENGTH: f64 = 0.25;
/// Relative perturbation of a surface change.
pub const SURFACE_STRENGTH: f64 = 0.10;
/// Length of the linear parameter blend between journey segments.
pub const CROSSFADE_SEC: f64 = 1.0;

type Grid = [[f64; AXES]; HARMONICS];

/// Independent seed for sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    GaitRng::seed_from(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitProfile {
    pub user_seed: u64,
    pub f0: f64,
    pub amplitude: Grid,
    pub phase: Grid,
    pub noise_sigma: f64,
    pub gravity: [f64; AXES],
}

pub fn generate_profile(user_seed: u64) -> GaitProfile {
    let mut rng = GaitRng::seed_from(user_seed);
    let f0 = (1.9 + 0.25 * rng.normal()).clamp(F0_RANGE.0, F0_RANGE.1);
    let mut amplitude = [[0.0; AXES]; HARMONICS];
    let mut phase = [[0.0; AXES]; HARMONICS];
    for k in 0..HARMONICS {
        for a in 0..AXES {
            amplitude[k][a] = BASE_AMPLITUDE[k] * AXIS_WEIGHT[a] * rng.uniform_range(0.4, 1.6);
            phase[k][a] = rng.uniform_range(0.0, TAU);
        }
    }
    let noise_sigma = rng.uniform_range(0.01, 0.04);
    let pitch = rng.uniform_range(-0.3, 0.3);
    let roll = rng.uniform_range(-0.3, 0.3);
    GaitProfile {
        user_seed,
        f0,
        amplitude,
        phase,
        noise_sigma,
        gravity: [pitch.sin(), roll.sin() * pitch.cos(), roll.cos() * pitch.cos()],
    }
}

/// Multiplicative amplitude and noise perturbations plus a step-frequency offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionModifier {
    pub label: String,
    pub amplitude_scale: Grid,
    pub f0_offset: f64,
    pub noise_scale: f64,
}

impl ConditionModifier {
    pub fn identity(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            amplitude_scale: [[1.0; AXES]; HARMONICS],
            f0_offset: 0.0,
            noise_scale: 1.0,
        }
    }

    /// Every harmonic amplitude scaled by an independent factor in `1 +- strength`.
    pub fn shoe(label: impl Into<String>, seed: u64, strength: f64) -> Self {
        let mut rng = GaitRng::seed_from(seed);
        let mut m = Self::identity(label);
        for row in &mut m.amplitude_scale {
            for s in row.iter_mut() {
                *s = 1.0 + strength * rng.uniform_range(-1.0, 1.0);
            }
        }
        m
    }

    /// Harmonics 3 to 5 and the noise level scaled by factors in `1 +- strength`.
    pub fn surface(label: impl Into<String>, seed: u64, strength: f64) -> Self {
        let mut rng = GaitRng::seed_from(seed);
        let mut m = Self::identity(label);
        for row in &mut m.amplitude_scale[2..] {
            for s in row.iter_mut() {
                *s = 1.0 + strength * rng.uniform_range(-1.0, 1.0);
            }
        }
        m.noise_scale = 1.0 + strength * rng.uniform_range(-1.0, 1.0);
        m
    }

    pub fn pace(label: impl Into<String>, f0_offset: f64) -> Self {
        Self {
            f0_offset,
            ..Self::identity(label)
        }
    }

    /// Both modifiers applied together.
    pub fn then(&self, other: &ConditionModifier) -> Self {
        let mut m = self.clone();
        m.label = format!("{}+{}", self.label, other.label);
        for k in 0..HARMONICS {
            for a in 0..AXES {
                m.amplitude_scale[k][a] *= other.amplitude_scale[k][a];
            }
        }
        m.f0_offset += other.f0_offset;
        m.noise_scale *= other.noise_scale;
        m
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !self.amplitude_scale.iter().flatten().all(|&s| finite_nonneg(s))
            || !finite_nonneg(self.noise_scale)
            || !self.f0_offset.is_finite()
        {
            return Err(Error::config(format!(
                "modifier {:?} must have finite, non-negative scales",
                self.label
            )));
        }
        Ok(())
    }
}

/// Parameters of a profile under a modifier.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    f0: f64,
    amplitude: Grid,
    sigma: f64,
}

impl Params {
    fn new(p: &GaitProfile, m: &ConditionModifier) -> Self {
        let mut amplitude = p.amplitude;
        for k in 0..HARMONICS {
            for a in 0..AXES {
                amplitude[k][a] = (amplitude[k][a] * m.amplitude_scale[k][a]).max(0.0);
            }
        }
        Self {
            f0: (p.f0 + m.f0_offset).clamp(MODIFIED_F0_RANGE.0, MODIFIED_F0_RANGE.1),
            amplitude,
            sigma: (p.noise_sigma * m.noise_scale).max(0.0),
        }
    }

    fn lerp(&self, other: &Params, w: f64) -> Self {
        let mix = |a: f64, b: f64| a + w * (b - a);
        let mut amplitude = self.amplitude;
        for k in 0..HARMONICS {
            for a in 0..AXES {
                amplitude[k][a] = mix(self.amplitude[k][a], other.amplitude[k][a]);
            }
        }
        Self {
            f0: mix(self.f0, other.f0),
            amplitude,
            sigma: mix(self.sigma, other.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneySegment {
    pub modifier: ConditionModifier,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneySpec {
    pub segments: Vec<JourneySegment>,
}

impl JourneySpec {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::config("a journey needs at least one segment"));
        }
        for s in &self.segments {
            s.modifier.validate()?;
            if !(s.duration_sec.is_finite() && s.duration_sec >= 1.0) {
                return Err(Error::config(format!(
                    "segment {:?} lasts {} s; at least 1 s is required",
                    s.modifier.label, s.duration_sec
                )));
            }
        }
        Ok(())
    }

    pub fn duration_sec(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_sec).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub t_start: f64,
    pub label: String,
}

fn synth_segments(
    profile: &GaitProfile,
    journey: &JourneySpec,
    fs: f64,
    seed: u64,
) -> Result<(AccelSeries, Vec<SegmentAnnotation>)> {
    journey.validate()?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::config(format!("sample rate {fs} must be positive")));
    }
    let params: Vec<Params> = journey.segments.iter().map(|s| Params::new(profile, &s.modifier)).collect();
    // segment boundaries in samples
    let mut bounds = Vec::with_capacity(journey.segments.len() + 1);
    let mut acc = 0.0;
    bounds.push(0usize);
    for s in &journey.segments {
        acc += s.duration_sec;
        bounds.push((acc * fs).round() as usize);
    }
    let annotations = journey
        .segments
        .iter()
        .zip(&bounds)
        .map(|(s, &b)| SegmentAnnotation {
            t_start: b as f64 / fs,
            label: s.modifier.label.clone(),
        })
        .collect();

    let n = *bounds.last().unwrap();
    let fade = (CROSSFADE_SEC * fs).round() as usize;
    let mut rng = GaitRng::seed_from(seed);
    let mut cycles = 0.0;
    let mut seg = 0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        while i >= bounds[seg + 1] {
            seg += 1;
        }
        let into = i - bounds[seg];
        let p = if seg > 0 && into < fade {
            params[seg - 1].lerp(&params[seg], into as f64 / fade as f64)
        } else {
            params[seg]
        };
        let mut v = profile.gravity;
        for (a, axis) in v.iter_mut().enumerate() {
            for k in 0..HARMONICS {
                let arg = TAU * (k + 1) as f64 * cycles + profile.phase[k][a];
                *axis += p.amplitude[k][a] * arg.sin();
            }
            *axis += p.sigma * rng.normal();
        }
        samples.push(AccelSample {
            t: i as f64 / fs,
            ax: v[0],
            ay: v[1],
            az: v[2],
        });
        cycles += p.f0 / fs;
    }
    Ok((AccelSeries { samples, fs }, annotations))
}

pub fn synth_session(
    profile: &GaitProfile,
    modifier: &ConditionModifier,
    duration_sec: f64,
    fs: f64,
    session_seed: u64,
) -> Result<AccelSeries> {
    let journey = JourneySpec {
        segments: vec![JourneySegment {
            modifier: modifier.clone(),
            duration_sec,
        }],
    };
    Ok(synth_segments(profile, &journey, fs, session_seed)?.0)
}

/// Concatenated segments, each blended linearly into the next over one
/// second, with the start time and label of every segment.
pub fn synth_journey(
    profile: &GaitProfile,
    journey: &JourneySpec,
    fs: f64,
    seed: u64,
) -> Result<(AccelSeries, Vec<SegmentAnnotation>)> {
    synth_segments(profile, journey, fs, seed)
}

/// Shoe and surface labels of condition `index`: conditions enumerate
/// (shoe1, surface1), (shoe1, surface2), (shoe2, surface1), (shoe2, surface2), ...
pub fn condition_labels(index: usize) -> (usize, usize) {
    (index / 2 + 1, index % 2 + 1)
}

/// Modifier of a user under shoe `shoe` and surface `surface` (1-based;
/// shoe 1 and surface 1 are the user's baseline).
pub fn condition_modifier(user_seed: u64, shoe: usize, surface: usize) -> ConditionModifier {
    let shoe_m = if shoe <= 1 {
        ConditionModifier::identity(format!("shoe{shoe}"))
    } else {
        ConditionModifier::shoe(format!("shoe{shoe}"), derive_seed(user_seed, 100 + shoe as u64), SHOE_STRENGTH)
    };
    let surface_m = if surface <= 1 {
        ConditionModifier::identity(format!("surface{surface}"))
    } else {
        ConditionModifier::surface(
            format!("surface{surface}"),
            derive_seed(user_seed, 200 + surface as u64),
            SURFACE_STRENGTH,
        )
    };
    shoe_m.then(&surface_m)
}

/// A journey segment described by condition indices rather than raw
/// modifiers, so one plan can be walked by any user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannedSegment {
    pub label: String,
    #[serde(default = "one")]
    pub shoe: usize,
    #[serde(default = "one")]
    pub surface: usize,
    #[serde(default)]
    pub f0_offset: f64,
    pub duration_sec: f64,
}

fn one() -> usize {
    1
}

/// Resolves a planned journey into the modifiers of user `user_seed`.
pub fn plan_journey(user_seed: u64, plan: &[PlannedSegment]) -> JourneySpec {
    JourneySpec {
        segments: plan
            .iter()
            .map(|p| {
                let mut modifier = condition_modifier(user_seed, p.shoe, p.surface)
                    .then(&ConditionModifier::pace("pace", p.f0_offset));
                modifier.label = p.label.clone();
                JourneySegment {
                    modifier,
                    duration_sec: p.duration_sec,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub conditions: usize,
    pub duration_sec: f64,
    pub master_seed: u64,
    pub fs: f64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.sessions_per_user == 0 || self.conditions == 0 {
            return Err(Error::config("users, sessions and conditions must be at least 1"));
        }
        if !(self.duration_sec.is_finite() && self.duration_sec >= 1.0) {
            return Err(Error::config("session duration must be at least 1 s"));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(())
    }

    pub fn user_seed(&self, user: usize) -> u64 {
        self.master_seed.wrapping_add(user as u64)
    }
}

pub fn user_id(index: usize) -> String {
    format!("user{index:03}")
}

pub fn session_id(user: usize, condition: usize, repeat: usize) -> String {
    format!("user{user:03}-c{condition}-r{repeat}")
}

/// The accelerometer series of one corpus session.
pub fn corpus_session(spec: &DatasetSpec, user: usize, condition: usize, repeat: usize) -> Result<(ManifestEntry, AccelSeries)> {
    let seed = spec.user_seed(user);
    let profile = generate_profile(seed);
    let (shoe, surface) = condition_labels(condition);
    let modifier = condition_modifier(seed, shoe, surface);
    let session_seed = derive_seed(seed, 1000 + (condition * 1000 + repeat) as u64);
    let series = synth_session(&profile, &modifier, spec.duration_sec, spec.fs, session_seed)?;
    let sid = session_id(user, condition, repeat);
    let entry = ManifestEntry {
        user_id: user_id(user),
        session_id: sid.clone(),
        sensor_position: "head".into(),
        shoe_id: format!("shoe{shoe}"),
        surface: format!("surface{surface}"),
        fs: spec.fs,
        path: format!("{sid}.csv"),
    };
    Ok((entry, series))
}

/// Writes one CSV per session and `manifest.json` into `out_dir`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::new();
    for user in 0..spec.n_users {
        for condition in 0..spec.conditions {
            for repeat in 0..spec.sessions_per_user {
                let (entry, series) = corpus_session(spec, user, condition, repeat)?;
                write_session_csv(&out_dir.join(&entry.path), &series)?;
                manifest.push(entry);
            }
        }
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::magnitude;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn flat_profile() -> GaitProfile {
        GaitProfile {
            user_seed: 0,
            f0: 2.0,
            amplitude: [[0.0; AXES]; HARMONICS],
            phase: [[0.0; AXES]; HARMONICS],
            noise_sigma: 0.0,
            gravity: [0.0, 0.6, 0.8],
        }
    }

    #[test]
    fn profiles_deterministic_and_in_range() {
        assert_eq!(generate_profile(7), generate_profile(7));
        assert_ne!(generate_profile(1), generate_profile(2));
        for seed in 0..100 {
            let p = generate_profile(seed);
            assert!((F0_RANGE.0..=F0_RANGE.1).contains(&p.f0));
            assert!(p.noise_sigma >= 0.0);
            assert!(p.amplitude.iter().flatten().all(|&a| a >= 0.0));
            let g: f64 = p.gravity.iter().map(|v| v * v).sum();
            assert!((g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_motion_gives_constant_gravity() {
        let s = synth_session(&flat_profile(), &ConditionModifier::identity("x"), 5.0, 100.0, 3).unwrap();
        let m = magnitude(&s).unwrap();
        assert_eq!(m.len(), 500);
        assert!(m.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn single_harmonic_peaks_at_f0() {
        let mut p = flat_profile();
        p.amplitude[0][2] = 0.3;
        let s = synth_session(&p, &ConditionModifier::identity("x"), 20.0, 100.0, 3).unwrap();
        let m = magnitude(&s).unwrap();
        let mean = m.values.iter().sum::<f64>() / m.len() as f64;
        let mut buf: Vec<Complex<f64>> = m.values.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = &buf[..buf.len() / 2];
        let peak = (0..half.len()).max_by(|&a, &b| half[a].norm().total_cmp(&half[b].norm())).unwrap();
        let bin_hz = 100.0 / m.len() as f64;
        assert!((peak as f64 * bin_hz - p.f0).abs() <= bin_hz, "peak at {} Hz", peak as f64 * bin_hz);
    }

    #[test]
    fn sessions_bit_identical_for_same_seed() {
        let p = generate_profile(11);
        let m = condition_modifier(11, 2, 2);
        let a = synth_session(&p, &m, 30.0, 100.0, 5).unwrap();
        let b = synth_session(&p, &m, 30.0, 100.0, 5).unwrap();
        assert_eq!(a, b);
        let c = synth_session(&p, &m, 30.0, 100.0, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn magnitudes_finite_and_nonnegative() {
        for seed in 0..5 {
            let p = generate_profile(seed);
            let s = synth_session(&p, &condition_modifier(seed, 2, 1), 10.0, 100.0, seed).unwrap();
            let m = magnitude(&s).unwrap();
            assert!(m.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn single_segment_journey_equals_session() {
        let p = generate_profile(4);
        let m = ConditionModifier::pace("fast", 0.2);
        let session = synth_session(&p, &m, 12.0, 100.0, 9).unwrap();
        let journey = JourneySpec {
            segments: vec![JourneySegment {
                modifier: m,
                duration_sec: 12.0,
            }],
        };
        let (series, ann) = synth_journey(&p, &journey, 100.0, 9).unwrap();
        assert_eq!(series, session);
        assert_eq!(ann, vec![SegmentAnnotation { t_start: 0.0, label: "fast".into() }]);
    }

    #[test]
    fn three_segment_journey_layout() {
        let p = generate_profile(4);
        let seg = |label: &str, m: ConditionModifier| JourneySegment {
            modifier: ConditionModifier { label: label.into(), ..m },
            duration_sec: 60.0,
        };
        let journey = JourneySpec {
            segments: vec![
                seg("carpet", ConditionModifier::identity("")),
                seg("grass", ConditionModifier::surface("", 1, 0.1)),
                seg("fast", ConditionModifier::pace("", 0.3)),
            ],
        };
        let (series, ann) = synth_journey(&p, &journey, 100.0, 1).unwrap();
        assert_eq!(series.len(), 18_000);
        assert!((series.duration_sec() - 180.0).abs() < 0.02);
        let starts: Vec<f64> = ann.iter().map(|a| a.t_start).collect();
        assert_eq!(starts, vec![0.0, 60.0, 120.0]);
        assert_eq!(ann[1].label, "grass");
    }

    #[test]
    fn parameters_change_at_annotated_boundaries() {
        // Noise-free, constant-amplitude segments differing only in amplitude:
        // the signal before the boundary matches the first segment exactly.
        let mut p = flat_profile();
        p.amplitude[0][2] = 0.2;
        let mut loud = ConditionModifier::identity("loud");
        loud.amplitude_scale[0][2] = 2.0;
        let journey = JourneySpec {
            segments: vec![
                JourneySegment { modifier: ConditionModifier::identity("quiet"), duration_sec: 10.0 },
                JourneySegment { modifier: loud.clone(), duration_sec: 10.0 },
            ],
        };
        let (series, ann) = synth_journey(&p, &journey, 100.0, 0).unwrap();
        let quiet = synth_session(&p, &ConditionModifier::identity("quiet"), 10.0, 100.0, 0).unwrap();
        assert_eq!(&series.samples[..1000], &quiet.samples[..]);
        assert_eq!(ann[1].t_start, 10.0);
        // after the crossfade the amplitude is doubled
        let tail_max = series.samples[1100..].iter().map(|s| (s.az - 0.8).abs()).fold(0.0, f64::max);
        assert!((tail_max - 0.4).abs() < 1e-3);
    }

    #[test]
    fn modifiers_keep_f0_in_range() {
        let p = GaitProfile { f0: 2.3, ..generate_profile(1) };
        let s = Params::new(&p, &ConditionModifier::pace("sprint", 5.0));
        assert_eq!(s.f0, MODIFIED_F0_RANGE.1);
        let m = condition_modifier(3, 2, 2);
        assert!(m.amplitude_scale.iter().flatten().all(|&v| (0.75 * 0.9 - 1e-12..=1.25 * 1.1 + 1e-12).contains(&v)));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn dataset_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_users: 3,
            sessions_per_user: 1,
            conditions: 4,
            duration_sec: 2.0,
            master_seed: 42,
            fs: 100.0,
        };
        let manifest = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(manifest.len(), 12);
        let csvs = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
            .count();
        assert_eq!(csvs, 12);
        assert_eq!(manifest[3].shoe_id, "shoe2");
        assert_eq!(manifest[3].surface, "surface2");

        let dir2 = tempfile::tempdir().unwrap();
        generate_dataset(&spec, dir2.path()).unwrap();
        for e in &manifest {
            let a = std::fs::read(dir.path().join(&e.path)).unwrap();
            let b = std::fs::read(dir2.path().join(&e.path)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(
            std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn user_sessions_share_f0() {
        let spec = DatasetSpec {
            n_users: 2,
            sessions_per_user: 1,
            conditions: 4,
            duration_sec: 1.0,
            master_seed: 42,
            fs: 100.0,
        };
        let profile = generate_profile(spec.user_seed(1));
        for c in 0..4 {
            let (shoe, surface) = condition_labels(c);
            let m = condition_modifier(spec.user_seed(1), shoe, surface);
            assert_eq!(Params::new(&profile, &m).f0, profile.f0);
        }
    }
}
