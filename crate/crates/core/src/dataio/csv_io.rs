use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_segments, MergedSegment, PipelineConfig, RawRecording, RecordingMeta, EMG_COLUMN, IMU_COLUMNS};
use crate::error::{Error, Result};
use crate::model::IMU_CHANNELS;
use crate::signal::SegmentBounds;
use crate::tensor::Tensor;

const UNIFIED_HEADER: [&str; 9] = [
    "segment_id",
    "sample_idx",
    "emg_norm_env",
    "ax",
    "ay",
    "az",
    "gx",
    "gy",
    "gz",
];

/// A column picked by header name or by zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    fn label(&self) -> String {
        match self {
            ColumnRef::Index(i) => format!("#{i}"),
            ColumnRef::Name(n) => n.clone(),
        }
    }

    fn resolve(&self, headers: &[String], path: &Path) -> Result<usize> {
        let found = match self {
            ColumnRef::Index(i) => (*i < headers.len()).then_some(*i),
            ColumnRef::Name(n) => headers.iter().position(|h| h == n),
        };
        found.ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            column: self.label(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnSchema {
    pub emg: ColumnRef,
    /// accel x/y/z then gyro x/y/z.
    pub imu: [ColumnRef; IMU_CHANNELS],
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            emg: ColumnRef::Name(EMG_COLUMN.into()),
            imu: IMU_COLUMNS.map(|c| ColumnRef::Name(c.into())),
        }
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn headers(rdr: &mut csv::Reader<fs::File>, path: &Path) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Reads the selected numeric columns. Rows holding an empty or non-finite
/// value in any selected column are dropped; unparsable text is an error.
fn read_columns(path: &Path, columns: &[ColumnRef]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    let header = headers(&mut rdr, path)?;
    let idx = columns
        .iter()
        .map(|c| c.resolve(&header, path))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::new(); columns.len()];
    let mut row = vec![0.0f64; columns.len()];
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut keep = true;
        for (slot, &i) in row.iter_mut().zip(&idx) {
            let field = record.get(i).unwrap_or("");
            if field.is_empty() {
                keep = false;
                continue;
            }
            *slot = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("`{field}` is not a number"),
            })?;
            keep &= slot.is_finite();
        }
        if keep {
            out.iter_mut().zip(&row).for_each(|(col, &v)| col.push(v));
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with missing or non-finite values",
            path.display()
        );
    }
    if out[0].is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

/// `<stem>.meta.toml` beside a recording CSV.
pub fn meta_sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// `<stem>.segments.toml` beside a unified segment CSV.
pub fn segments_sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("segments.toml")
}

pub fn read_meta(path: &Path) -> Result<RecordingMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_meta(meta: &RecordingMeta, path: &Path) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn meta_or_default(csv: &Path) -> Result<RecordingMeta> {
    let side = meta_sidecar_path(csv);
    if side.exists() {
        read_meta(&side)
    } else {
        Ok(RecordingMeta {
            subject: csv
                .file_stem()
                .map_or("unknown".into(), |s| s.to_string_lossy().into_owned()),
            ..RecordingMeta::default()
        })
    }
}

/// Loads a seven-column recording. Metadata comes from the `.meta.toml`
/// sidecar when present.
pub fn load_recording(path: &Path, schema: &ColumnSchema) -> Result<RawRecording> {
    let mut columns = vec![schema.emg.clone()];
    columns.extend(schema.imu.iter().cloned());
    let mut cols = read_columns(path, &columns)?.into_iter();
    let emg = cols.next().expect("emg column");
    let imu: [Vec<f64>; IMU_CHANNELS] = std::array::from_fn(|_| cols.next().expect("imu column"));
    RawRecording::aligned(emg, imu, meta_or_default(path)?)
}

/// Loads EMG and IMU from separate files and truncates both to the shorter.
pub fn load_recording_pair(emg_path: &Path, imu_path: &Path, schema: &ColumnSchema) -> Result<RawRecording> {
    let emg = read_columns(emg_path, std::slice::from_ref(&schema.emg))?.remove(0);
    let mut cols = read_columns(imu_path, &schema.imu)?.into_iter();
    let imu: [Vec<f64>; IMU_CHANNELS] = std::array::from_fn(|_| cols.next().expect("imu column"));
    RawRecording::aligned(emg, imu, meta_or_default(emg_path)?)
}

/// Writes a recording in the default column layout plus its metadata sidecar.
pub fn write_recording(rec: &RawRecording, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(rec.len() * 7 * 24);
    out.push_str(EMG_COLUMN);
    for c in IMU_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for t in 0..rec.len() {
        let _ = write!(out, "{:.16e}", rec.emg.samples[t]);
        for ch in &rec.imu {
            let _ = write!(out, ",{:.16e}", ch.samples[t]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    write_meta(&rec.meta, &meta_sidecar_path(path))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentsSidecar {
    recording: RecordingMeta,
    segments: Vec<SegmentEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentEntry {
    rep: usize,
    start: usize,
    end: usize,
    peak: usize,
}

/// Writes the unified segment CSV and its `.segments.toml` sidecar. All
/// segments must come from one recording.
pub fn write_unified(segments: &[MergedSegment], path: &Path) -> Result<()> {
    let first = segments.first().ok_or(Error::EmptyInput("no segments to write"))?;
    if segments.iter().any(|s| s.meta != first.meta) {
        return Err(Error::Config(
            "unified file must hold segments of a single recording".into(),
        ));
    }
    let total: usize = segments.iter().map(MergedSegment::len).sum();
    let mut out = String::with_capacity(total * 9 * 24);
    out.push_str(&UNIFIED_HEADER.join(","));
    out.push('\n');
    for s in segments {
        for t in 0..s.len() {
            let _ = write!(out, "{},{},{:.16e}", s.rep, s.bounds.start + t, s.target[t]);
            for c in 0..IMU_CHANNELS {
                let _ = write!(out, ",{:.16e}", s.imu.get(c, t));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let sidecar = SegmentsSidecar {
        recording: first.meta.clone(),
        segments: segments
            .iter()
            .map(|s| SegmentEntry {
                rep: s.rep,
                start: s.bounds.start,
                end: s.bounds.end,
                peak: s.bounds.peak,
            })
            .collect(),
    };
    let side = segments_sidecar_path(path);
    let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Reads a unified segment CSV and its sidecar back into segments.
pub fn load_unified(path: &Path) -> Result<Vec<MergedSegment>> {
    let side = segments_sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: SegmentsSidecar =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;

    let columns: Vec<ColumnRef> = UNIFIED_HEADER.iter().map(|c| ColumnRef::Name(c.to_string())).collect();
    let cols = read_columns(path, &columns)?;
    let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &id) in cols[0].iter().enumerate() {
        rows.entry(id as usize).or_default().push(r);
    }

    let mut out = Vec::with_capacity(sidecar.segments.len());
    for e in sidecar.segments {
        let bounds = SegmentBounds {
            start: e.start,
            end: e.end,
            peak: e.peak,
        };
        let idx = rows.remove(&e.rep).unwrap_or_default();
        let contiguous = idx.len() == bounds.len()
            && idx
                .iter()
                .enumerate()
                .all(|(t, &r)| cols[1][r] as usize == bounds.start + t);
        if !contiguous {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("rows of segment {} do not cover [{}, {})", e.rep, e.start, e.end),
            });
        }
        let target: Vec<f64> = idx.iter().map(|&r| cols[2][r]).collect();
        if target.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("segment {} has targets outside [0, 1]", e.rep),
            });
        }
        let mut imu = Tensor::zeros(IMU_CHANNELS, idx.len());
        for c in 0..IMU_CHANNELS {
            for (t, &r) in idx.iter().enumerate() {
                imu.set(c, t, cols[3 + c][r]);
            }
        }
        out.push(MergedSegment {
            bounds,
            target,
            imu,
            meta: sidecar.recording.clone(),
            rep: e.rep,
        });
    }
    if let Some(rep) = rows.keys().next() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("segment {rep} is missing from the sidecar"),
        });
    }
    Ok(out)
}

fn is_unified(path: &Path) -> Result<bool> {
    let mut rdr = reader(path)?;
    let header = headers(&mut rdr, path)?;
    Ok(header.first().map(String::as_str) == Some(UNIFIED_HEADER[0]))
}

/// Loads every `*.csv` in `dir` in file-name order. Unified segment files
/// are read as-is; raw recordings run through `build_segments`.
pub fn load_dataset_dir(dir: &Path, schema: &ColumnSchema, pipeline: &PipelineConfig) -> Result<Vec<MergedSegment>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "csv") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no .csv recordings in {}",
            dir.display()
        )));
    }
    let mut segments = Vec::new();
    for f in &files {
        let segs = if is_unified(f)? {
            load_unified(f)?
        } else {
            build_segments(&load_recording(f, schema)?, pipeline)?
        };
        log::info!("{}: {} segments", f.display(), segs.len());
        segments.extend(segs);
    }
    Ok(segments)
}
