//! CSV and TOML artifacts, written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{mag_to_db, FirFilter, FrequencyGrid};
use crate::metrics::{SnrSweep, Spectrum};
use crate::ntf::DesignResult;
use crate::sim::SimTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub u: f64,
    pub psi: f64,
    pub y: f64,
    pub n: f64,
    pub overload: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub omega: f64,
    pub mag_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub amp: f64,
    pub amp_db: f64,
    pub snr_db: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub omega: f64,
    pub mag: f64,
    pub mag_db: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

fn from_csv<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

pub fn trace_csv(tr: &SimTrace) -> Result<Vec<u8>> {
    to_csv((0..tr.len()).map(|k| TraceRow {
        k,
        u: tr.u[k],
        psi: tr.psi[k],
        y: tr.y[k],
        n: tr.n[k],
        overload: tr.overload[k],
    }))
}

pub fn read_trace_csv(bytes: &[u8]) -> Result<Vec<TraceRow>> {
    from_csv(bytes)
}

pub fn spectrum_csv(s: &Spectrum) -> Result<Vec<u8>> {
    to_csv(s.omega.iter().zip(&s.magnitude).map(|(w, m)| SpectrumRow {
        omega: *w,
        mag_db: mag_to_db(*m),
    }))
}

pub fn read_spectrum_csv(bytes: &[u8]) -> Result<Vec<SpectrumRow>> {
    from_csv(bytes)
}

pub fn sweep_csv(s: &SnrSweep) -> Result<Vec<u8>> {
    to_csv((0..s.amplitudes.len()).map(|i| SweepRow {
        amp: s.amplitudes[i],
        amp_db: s.amplitudes_db[i],
        snr_db: s.snr_db[i],
        within_bound: s.within_bound[i],
    }))
}

pub fn read_sweep_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    from_csv(bytes)
}

/// `|F(e^{jw})|` on the uniform grid of `points` frequencies over `[0, pi]`.
pub fn response_csv(f: &FirFilter, points: usize) -> Result<Vec<u8>> {
    let grid = FrequencyGrid::uniform(points);
    to_csv(grid.points().iter().map(|w| {
        let mag = f.magnitude_at(*w);
        ResponseRow {
            omega: *w,
            mag,
            mag_db: mag_to_db(mag),
        }
    }))
}

pub fn read_response_csv(bytes: &[u8]) -> Result<Vec<ResponseRow>> {
    from_csv(bytes)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_design(path: &Path) -> Result<DesignResult> {
    from_toml(&fs::read_to_string(path)?)
}

/// Artifacts that land together: every file is staged next to its target
/// before any of them is renamed into place.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) {
        self.files.push((path.into(), contents.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> Result<()> {
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            fs::create_dir_all(&dir)?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        }
        Ok(())
    }
}

/// Writes one file through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut set = OutputSet::new();
    set.add(path, contents);
    set.commit()
}
