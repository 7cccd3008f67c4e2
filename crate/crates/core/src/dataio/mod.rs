//! Recording ingestion, segment assembly, the unified segment format,
//! dataset splitting and training-window sampling.

mod csv_io;
mod split;

pub use csv_io::{
    load_dataset_dir, load_recording, load_recording_pair, load_unified, meta_sidecar_path, read_meta,
    segments_sidecar_path, write_meta, write_recording, write_unified, ColumnRef, ColumnSchema,
};
pub use split::{make_windows, split_dataset, DatasetSplit, WindowBatch, WindowSampler};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IMU_CHANNELS;
use crate::signal::{
    compute_envelope, detect_peaks, normalize_envelope, preprocess_emg, segment_by_peaks, EnvelopeConfig,
    FilterChainConfig, SampledSignal, SegmentBounds, DEFAULT_FS,
};
use crate::tensor::Tensor;

pub const EMG_COLUMN: &str = "emg";
pub const IMU_COLUMNS: [&str; IMU_CHANNELS] = ["accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    BicepCurl,
    TricepExtension,
    Supination,
    Pronation,
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::BicepCurl,
        Motion::TricepExtension,
        Motion::Supination,
        Motion::Pronation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Motion::BicepCurl => "bicep_curl",
            Motion::TricepExtension => "tricep_extension",
            Motion::Supination => "supination",
            Motion::Pronation => "pronation",
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Motion::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion `{s}`")))
    }
}

/// Per-recording metadata, stored in a TOML sidecar next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
    #[serde(default)]
    pub day: u32,
    #[serde(default = "default_fs")]
    pub fs: f64,
}

fn default_fs() -> f64 {
    DEFAULT_FS
}

impl Default for RecordingMeta {
    fn default() -> Self {
        Self {
            subject: "unknown".into(),
            motion: None,
            day: 0,
            fs: DEFAULT_FS,
        }
    }
}

impl RecordingMeta {
    pub fn motion_label(&self) -> &'static str {
        self.motion.map_or("unlabeled", |m| m.as_str())
    }
}

/// Paired EMG and 6-axis IMU channels of equal length and shared rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub emg: SampledSignal,
    /// accel x/y/z then gyro x/y/z.
    pub imu: [SampledSignal; IMU_CHANNELS],
    pub meta: RecordingMeta,
}

impl RawRecording {
    /// Builds a recording, truncating every channel to the shortest one.
    pub fn aligned(emg: Vec<f64>, imu: [Vec<f64>; IMU_CHANNELS], meta: RecordingMeta) -> Result<Self> {
        let len = imu.iter().map(Vec::len).fold(emg.len(), usize::min);
        let fs = meta.fs;
        let channel = |mut v: Vec<f64>| {
            v.truncate(len);
            SampledSignal::new(v, fs)
        };
        let [a, b, c, d, e, f] = imu;
        Ok(Self {
            emg: channel(emg)?,
            imu: [
                channel(a)?,
                channel(b)?,
                channel(c)?,
                channel(d)?,
                channel(e)?,
                channel(f)?,
            ],
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.emg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emg.is_empty()
    }

    /// IMU samples `[start, end)` as a `[6 x T]` tensor.
    pub fn imu_tensor(&self, start: usize, end: usize) -> Tensor {
        let mut t = Tensor::zeros(IMU_CHANNELS, end - start);
        for (c, ch) in self.imu.iter().enumerate() {
            t.row_mut(c).copy_from_slice(&ch.samples[start..end]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub min_distance: usize,
    pub top_k: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            min_distance: 150,
            top_k: 7,
        }
    }
}

/// Everything `build_segments` needs to turn a recording into segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub filter: FilterChainConfig,
    pub envelope: EnvelopeConfig,
    pub segmentation: SegmentationConfig,
}

/// One repetition: aligned normalized-envelope target and IMU input.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSegment {
    pub bounds: SegmentBounds,
    pub target: Vec<f64>,
    /// `[6 x T]`
    pub imu: Tensor,
    pub meta: RecordingMeta,
    pub rep: usize,
}

impl MergedSegment {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn id(&self) -> String {
        format!(
            "{}-{}-day{}-rep{}",
            self.meta.subject,
            self.meta.motion_label(),
            self.meta.day,
            self.rep
        )
    }

    pub fn target_tensor(&self) -> Tensor {
        Tensor::from_vec(1, self.target.len(), self.target.clone()).expect("target is a single row")
    }
}

/// Normalized envelope of the recording's EMG channel.
pub fn emg_envelope(rec: &RawRecording, cfg: &PipelineConfig) -> Result<SampledSignal> {
    if rec.is_empty() {
        return Err(Error::EmptyInput("recording has no samples"));
    }
    let filtered = preprocess_emg(&rec.emg, &cfg.filter)?;
    let env = compute_envelope(&filtered, &cfg.envelope)?;
    normalize_envelope(&env).map_err(|_| Error::NoActivity(format!("subject {}: envelope is flat", rec.meta.subject)))
}

/// Filters, envelopes and normalizes the EMG, detects repetition peaks, and
/// cuts the target and all IMU channels at the same midpoint boundaries.
pub fn build_segments(rec: &RawRecording, cfg: &PipelineConfig) -> Result<Vec<MergedSegment>> {
    let env = emg_envelope(rec, cfg)?;
    let seg = cfg.segmentation;
    let peaks = detect_peaks(&env.samples, seg.min_distance, seg.top_k)?;
    if peaks.is_empty() {
        return Err(Error::NoActivity(format!(
            "subject {}: no envelope peaks",
            rec.meta.subject
        )));
    }
    let bounds = segment_by_peaks(&peaks, rec.len())?;
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(rep, b)| MergedSegment {
            bounds: b,
            target: env.samples[b.start..b.end].to_vec(),
            imu: rec.imu_tensor(b.start, b.end),
            meta: rec.meta.clone(),
            rep,
        })
        .collect())
}
