use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::GaitRng;
use crate::signal::{pixel_dropout, window_len_samples, AugmentConfig, Spectrogram, Stft};

use super::loss::Pairing;
use super::TrainConfig;

/// Where a batch sample was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSource {
    pub user_id: String,
    pub session_id: String,
    pub start: usize,
    pub len: usize,
}

impl SampleSource {
    pub fn overlaps(&self, other: &SampleSource) -> bool {
        self.session_id == other.session_id
            && self.start < other.start + other.len
            && other.start < self.start + self.len
    }
}

/// `2N` augmented spectrograms; samples `2k` and `2k + 1` form the k-th
/// positive pair.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub specs: Vec<Spectrogram>,
    pub pairing: Pairing,
    pub sources: Vec<SampleSource>,
}

/// Draws `pairs_per_batch` users without replacement, one session each, and
/// two non-overlapping windows from that session. Each window gets its own
/// pixel-dropout seed.
pub fn sample_batch(dataset: &Dataset, cfg: &TrainConfig, rng: &mut GaitRng) -> Result<ContrastiveBatch> {
    let stft = Stft::new(cfg.stft)?;
    sample_batch_with(dataset, cfg, &stft, rng)
}

pub(crate) fn sample_batch_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    stft: &Stft,
    rng: &mut GaitRng,
) -> Result<ContrastiveBatch> {
    let n = cfg.pairs_per_batch;
    let fs = dataset
        .sessions
        .first()
        .map(|s| s.signal.fs)
        .ok_or_else(|| Error::InsufficientData("training set has no sessions".into()))?;
    let w = window_len_samples(cfg.window_sec, fs);
    let eligible: Vec<(String, Vec<_>)> = dataset
        .by_user()
        .into_iter()
        .map(|(u, sessions)| {
            let ok: Vec<_> = sessions.into_iter().filter(|s| s.signal.len() >= 2 * w).collect();
            (u, ok)
        })
        .filter(|(_, s)| !s.is_empty())
        .collect();
    if eligible.len() < n {
        return Err(Error::InsufficientData(format!(
            "batch of {n} pairs needs {n} users with a session of at least {:.1} s; only {} available",
            2.0 * cfg.window_sec,
            eligible.len()
        )));
    }

    let mut specs = Vec::with_capacity(2 * n);
    let mut sources = Vec::with_capacity(2 * n);
    for ui in rng.sample_indices(eligible.len(), n) {
        let (user_id, sessions) = &eligible[ui];
        let session = &sessions[rng.below(sessions.len())];
        let len = session.signal.len();
        let last = len - w;
        let (first, second) = loop {
            let s1 = rng.below(last + 1);
            let before = if s1 >= w { s1 - w + 1 } else { 0 };
            let after = if last >= s1 + w { last - (s1 + w) + 1 } else { 0 };
            if before + after == 0 {
                continue;
            }
            let r = rng.below(before + after);
            let s2 = if r < before { r } else { s1 + w + (r - before) };
            break (s1, s2);
        };
        for start in [first, second] {
            let spec = stft.spectrogram(&session.signal.values[start..start + w])?;
            let aug = AugmentConfig {
                dropout_p: cfg.dropout_p,
                rng_seed: rng.next_u64(),
            };
            specs.push(pixel_dropout(&spec, &aug)?);
            sources.push(SampleSource {
                user_id: user_id.clone(),
                session_id: session.session_id().to_owned(),
                start,
                len: w,
            });
        }
    }
    Ok(ContrastiveBatch {
        specs,
        pairing: Pairing::adjacent(n),
        sources,
    })
}
