//! Session CSV files and the dataset manifest.
//!
//! A session file has the header `t,x,y,z` and one row per sample, values in
//! seconds and g. The manifest is a JSON array of [`ManifestEntry`], with
//! `path` resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{magnitude, AccelSample, AccelSeries, MagnitudeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub session_id: String,
    pub sensor_position: String,
    pub shoe_id: String,
    pub surface: String,
    pub fs: f64,
    pub path: String,
}

/// Writes `t,x,y,z` with six decimals, the corpus precision.
pub fn write_session_csv(path: &Path, series: &AccelSeries) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,x,y,z")?;
    for s in &series.samples {
        writeln!(out, "{:.6},{:.6},{:.6},{:.6}", s.t, s.ax, s.ay, s.az)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_session_csv(path: &Path, fs: f64) -> Result<AccelSeries> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).ne(["t", "x", "y", "z"]) {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("expected header t,x,y,z, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut vals = [0.0f64; 4];
        if record.len() != 4 {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: format!("row {}: expected 4 fields, found {}", row + 2, record.len()),
            });
        }
        for (slot, field) in vals.iter_mut().zip(record.iter()) {
            *slot = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                message: format!("row {}: {field:?} is not a number", row + 2),
            })?;
        }
        samples.push(AccelSample {
            t: vals[0],
            ax: vals[1],
            ay: vals[2],
            az: vals[3],
        });
    }
    let series = AccelSeries { samples, fs };
    series.validate().map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    Ok(series)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, entries)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// One walking session reduced to its magnitude signal.
#[derive(Debug, Clone)]
pub struct Session {
    pub meta: ManifestEntry,
    pub signal: MagnitudeSeries,
}

impl Session {
    pub fn from_accel(meta: ManifestEntry, series: &AccelSeries) -> Result<Self> {
        Ok(Self {
            meta,
            signal: magnitude(series)?,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.meta.user_id
    }

    pub fn session_id(&self) -> &str {
        &self.meta.session_id
    }
}

/// All sessions of a corpus, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sessions: Vec<Arc<Session>>,
}

impl Dataset {
    pub fn new(sessions: Vec<Session>) -> Self {
        Self {
            sessions: sessions.into_iter().map(Arc::new).collect(),
        }
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let entries = read_manifest(manifest_path)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut sessions = Vec::with_capacity(entries.len());
        for entry in entries {
            let path = resolve(&base, &entry.path);
            let series = read_session_csv(&path, entry.fs)?;
            sessions.push(Session::from_accel(entry, &series)?);
        }
        Ok(Self::new(sessions))
    }

    /// Distinct user ids in first-appearance order.
    pub fn user_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.sessions
            .iter()
            .filter(|s| seen.insert(s.user_id().to_owned()))
            .map(|s| s.user_id().to_owned())
            .collect()
    }

    pub fn sessions_of(&self, user_id: &str) -> Vec<Arc<Session>> {
        self.sessions
            .iter()
            .filter(|s| s.user_id() == user_id)
            .cloned()
            .collect()
    }

    pub fn by_user(&self) -> BTreeMap<String, Vec<Arc<Session>>> {
        let mut map: BTreeMap<String, Vec<Arc<Session>>> = BTreeMap::new();
        for s in &self.sessions {
            map.entry(s.user_id().to_owned()).or_default().push(s.clone());
        }
        map
    }

    /// Sessions restricted to the given users.
    pub fn subset(&self, users: &[String]) -> Dataset {
        Dataset {
            sessions: self
                .sessions
                .iter()
                .filter(|s| users.iter().any(|u| u == s.user_id()))
                .cloned()
                .collect(),
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
