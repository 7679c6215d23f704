//! Dataset manifest and file ingestion.
//!
//! A dataset is a JSON manifest plus one or two CSV files per subject:
//!
//! * continuous mode: a data CSV (`time_s` column followed by one column per
//!   channel, microvolts) and an events CSV (`time_s,stimulus`); filtering,
//!   segmentation and averaging are applied per the load options;
//! * erp mode: a precomputed-ERP CSV with columns
//!   `stimulus,channel,sample_index,value_uV`.
//!
//! All numeric parsing is locale independent (decimal point only).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::signal::{
    average_erp, bandpass_fir, baseline_correct, segment, window_len, ContinuousRecording,
    ErpSet, Event, Group, SignalError, Stimulus,
};

#[derive(Error, Debug)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {msg}")]
    Manifest { path: String, msg: String },
    #[error("{path}:{line}: {msg}")]
    Data { path: String, line: u64, msg: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl LoadError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        LoadError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn data(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        LoadError::Data {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

/// How a subject's files are to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectMode {
    Continuous,
    Erp,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SubjectFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub erp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub group: Group,
    pub mode: SubjectMode,
    pub files: SubjectFiles,
}

/// The dataset manifest: global acquisition parameters plus one entry per
/// subject (one session per subject; session selection is a manifest-level
/// concern).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub fs: f64,
    pub channels: Vec<String>,
    /// `[t0, t1)` epoch window in seconds.
    pub window: [f64; 2],
    pub subjects: Vec<SubjectEntry>,
    /// Free-form provenance block (tool version, config hash); ignored on
    /// load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Options applied while loading continuous recordings.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Bandpass applied before segmentation (continuous mode only).
    pub band: Option<(f64, f64)>,
    /// Subtract each epoch's own mean before averaging. Off by default.
    pub baseline_correct: bool,
}

/// Per-class subject counts of a loaded dataset.
pub fn stratification(subjects: &[ErpSet]) -> BTreeMap<Group, usize> {
    let mut counts = BTreeMap::new();
    for s in subjects {
        *counts.entry(s.group).or_insert(0) += 1;
    }
    counts
}

pub fn read_manifest(path: &Path) -> Result<Manifest, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| LoadError::Manifest {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    validate_manifest(&manifest, path)?;
    Ok(manifest)
}

fn validate_manifest(m: &Manifest, path: &Path) -> Result<(), LoadError> {
    let err = |msg: String| LoadError::Manifest {
        path: path.display().to_string(),
        msg,
    };
    if !(m.fs > 0.0) {
        return Err(err(format!("fs must be positive, got {}", m.fs)));
    }
    if m.window[1] <= m.window[0] {
        return Err(err(format!(
            "window [{}, {}) is empty",
            m.window[0], m.window[1]
        )));
    }
    if m.channels.is_empty() {
        return Err(err("channel list is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for c in &m.channels {
        if !seen.insert(c) {
            return Err(err(format!("duplicate channel name {c}")));
        }
    }
    if m.subjects.is_empty() {
        return Err(err("subject list is empty".into()));
    }
    let mut ids = BTreeSet::new();
    for s in &m.subjects {
        if !ids.insert(&s.id) {
            return Err(err(format!("duplicate subject id {}", s.id)));
        }
        match s.mode {
            SubjectMode::Continuous => {
                if s.files.data.is_none() || s.files.events.is_none() {
                    return Err(err(format!(
                        "subject {}: continuous mode needs files.data and files.events",
                        s.id
                    )));
                }
            }
            SubjectMode::Erp => {
                if s.files.erp.is_none() {
                    return Err(err(format!(
                        "subject {}: erp mode needs files.erp",
                        s.id
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Load every subject of a manifest into per-stimulus ERPs.
///
/// Continuous recordings are filtered (if a band is configured), segmented
/// over the manifest window and averaged; precomputed ERPs are read as-is.
pub fn load_dataset(manifest_path: &Path, opts: &LoadOptions) -> Result<Vec<ErpSet>, LoadError> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        out.push(load_subject(&manifest, entry, base, opts)?);
    }
    Ok(out)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_subject(
    manifest: &Manifest,
    entry: &SubjectEntry,
    base: &Path,
    opts: &LoadOptions,
) -> Result<ErpSet, LoadError> {
    match entry.mode {
        SubjectMode::Continuous => {
            let data_path = resolve(base, entry.files.data.as_ref().unwrap());
            let events_path = resolve(base, entry.files.events.as_ref().unwrap());
            let mut rec = read_continuous(&data_path, manifest, entry)?;
            rec.events = read_events(&events_path, rec.data.ncols() as f64 / rec.fs)?;
            if let Some((low, high)) = opts.band {
                rec = bandpass_fir(&rec, low, high)?;
            }
            let mut epochs = segment(&rec, (manifest.window[0], manifest.window[1]))?;
            if opts.baseline_correct {
                baseline_correct(&mut epochs);
            }
            Ok(average_erp(&epochs)?)
        }
        SubjectMode::Erp => {
            let erp_path = resolve(base, entry.files.erp.as_ref().unwrap());
            read_precomputed_erp(&erp_path, manifest, entry)
        }
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, LoadError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => LoadError::io(path, io),
            other => LoadError::data(path, 0, format!("{other:?}")),
        })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64, LoadError> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| LoadError::data(path, record_line(rec), format!("missing {what} column")))?;
    raw.parse::<f64>().map_err(|_| {
        LoadError::data(
            path,
            record_line(rec),
            format!("cannot parse {what} value {raw:?}"),
        )
    })
}

fn read_continuous(
    path: &Path,
    manifest: &Manifest,
    entry: &SubjectEntry,
) -> Result<ContinuousRecording, LoadError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| LoadError::data(path, 0, e.to_string()))?
        .clone();
    if headers.get(0) != Some("time_s") {
        return Err(LoadError::data(path, 1, "first column must be time_s"));
    }
    let mut col_of = Vec::with_capacity(manifest.channels.len());
    for c in &manifest.channels {
        let idx = headers.iter().position(|h| h == c).ok_or_else(|| {
            LoadError::data(path, 1, format!("channel {c} missing from data file"))
        })?;
        col_of.push(idx);
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LoadError::data(path, 0, e.to_string()))?;
        times.push(parse_f64(path, &rec, 0, "time_s")?);
        let mut row = Vec::with_capacity(col_of.len());
        for (&idx, name) in col_of.iter().zip(&manifest.channels) {
            row.push(parse_f64(path, &rec, idx, name)?);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(LoadError::data(path, 0, "need at least two samples"));
    }
    let dt = times[1] - times[0];
    if (dt * manifest.fs - 1.0).abs() > 1e-6 {
        return Err(LoadError::data(
            path,
            2,
            format!(
                "sample interval {dt} s does not match manifest fs {} Hz",
                manifest.fs
            ),
        ));
    }
    let n = rows.len();
    let c = manifest.channels.len();
    let mut data = Array2::zeros((c, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[[j, i]] = *v;
        }
    }
    Ok(ContinuousRecording {
        subject: entry.id.clone(),
        group: entry.group,
        fs: manifest.fs,
        channel_names: manifest.channels.clone(),
        data,
        events: Vec::new(),
    })
}

fn read_events(path: &Path, duration_s: f64) -> Result<Vec<Event>, LoadError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| LoadError::data(path, 0, e.to_string()))?
        .clone();
    let t_idx = headers
        .iter()
        .position(|h| h == "time_s")
        .ok_or_else(|| LoadError::data(path, 1, "missing time_s column"))?;
    let s_idx = headers
        .iter()
        .position(|h| h == "stimulus")
        .ok_or_else(|| LoadError::data(path, 1, "missing stimulus column"))?;
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LoadError::data(path, 0, e.to_string()))?;
        let t = parse_f64(path, &rec, t_idx, "time_s")?;
        let raw = rec.get(s_idx).unwrap_or("");
        let stim = Stimulus::parse(raw).ok_or_else(|| {
            LoadError::data(path, record_line(&rec), format!("unknown stimulus {raw:?}"))
        })?;
        if t < 0.0 || t > duration_s {
            return Err(LoadError::data(
                path,
                record_line(&rec),
                format!("event time {t} s outside recording duration {duration_s} s"),
            ));
        }
        events.push(Event {
            time_s: t,
            stimulus: stim,
        });
    }
    Ok(events)
}

fn read_precomputed_erp(
    path: &Path,
    manifest: &Manifest,
    entry: &SubjectEntry,
) -> Result<ErpSet, LoadError> {
    let l = window_len((manifest.window[0], manifest.window[1]), manifest.fs);
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| LoadError::data(path, 0, e.to_string()))?
        .clone();
    for (i, want) in ["stimulus", "channel", "sample_index", "value_uV"]
        .iter()
        .enumerate()
    {
        if headers.get(i) != Some(*want) {
            return Err(LoadError::data(
                path,
                1,
                format!("expected column {i} to be {want}"),
            ));
        }
    }
    let chan_idx: BTreeMap<&str, usize> = manifest
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut erps: BTreeMap<Stimulus, Array2<f64>> = BTreeMap::new();
    let mut filled: BTreeMap<Stimulus, Vec<u32>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LoadError::data(path, 0, e.to_string()))?;
        let line = record_line(&rec);
        let stim_raw = rec.get(0).unwrap_or("");
        let stim = Stimulus::parse(stim_raw)
            .ok_or_else(|| LoadError::data(path, line, format!("unknown stimulus {stim_raw:?}")))?;
        let chan_raw = rec.get(1).unwrap_or("");
        let Some(&c) = chan_idx.get(chan_raw) else {
            // channels beyond the manifest's interest are skipped
            continue;
        };
        let k = parse_f64(path, &rec, 2, "sample_index")? as i64;
        if k < 0 || k as usize >= l {
            return Err(LoadError::data(
                path,
                line,
                format!("sample_index {k} outside [0, {l})"),
            ));
        }
        let v = parse_f64(path, &rec, 3, "value_uV")?;
        let arr = erps
            .entry(stim)
            .or_insert_with(|| Array2::zeros((manifest.channels.len(), l)));
        arr[[c, k as usize]] = v;
        filled.entry(stim).or_insert_with(|| vec![0; manifest.channels.len()])[c] += 1;
    }
    if erps.is_empty() {
        return Err(LoadError::data(path, 0, "no ERP rows found"));
    }
    for (stim, counts) in &filled {
        for (c, &n) in counts.iter().enumerate() {
            if n as usize != l {
                return Err(LoadError::data(
                    path,
                    0,
                    format!(
                        "stimulus {stim}, channel {}: {n} samples, expected {l}",
                        manifest.channels[c]
                    ),
                ));
            }
        }
    }
    Ok(ErpSet {
        subject: entry.id.clone(),
        group: entry.group,
        fs: manifest.fs,
        window: (manifest.window[0], manifest.window[1]),
        channel_names: manifest.channels.clone(),
        erps,
        epoch_counts: BTreeMap::new(),
    })
}
