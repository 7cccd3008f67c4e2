//! Filtering, envelope extraction, normalization and peak-based
//! segmentation of raw sEMG recordings.

mod butterworth;
mod peaks;

pub use butterworth::{apply_filter, design_butterworth, Biquad, BiquadCascade, FilterBand};
pub use peaks::{detect_peaks, local_maxima, segment_by_peaks, SegmentBounds};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FS: f64 = 1000.0;

/// A uniformly sampled scalar channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl SampledSignal {
    /// Validates that `fs > 0` and every sample is finite.
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, fs })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The EMG filter chain, applied stage by stage in listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterChainConfig {
    pub order: usize,
    pub stages: Vec<FilterBand>,
}

impl Default for FilterChainConfig {
    fn default() -> Self {
        Self {
            order: 4,
            stages: vec![
                FilterBand::Highpass { cutoff: 70.0 },
                FilterBand::Bandpass { low: 20.0, high: 300.0 },
                FilterBand::Bandstop { low: 48.0, high: 52.0 },
            ],
        }
    }
}

impl FilterChainConfig {
    pub fn design(&self, fs: f64) -> Result<Vec<BiquadCascade>> {
        self.stages
            .iter()
            .map(|&band| design_butterworth(band, self.order, fs))
            .collect()
    }
}

/// Runs the raw EMG through every stage of the chain.
pub fn preprocess_emg(raw: &SampledSignal, chain: &FilterChainConfig) -> Result<SampledSignal> {
    let mut out = raw.clone();
    for cascade in chain.design(raw.fs)? {
        out = apply_filter(&out, &cascade)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    /// Low-pass cutoff applied after full-wave rectification, Hz.
    pub lowpass_hz: f64,
    pub order: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            lowpass_hz: 6.0,
            order: 4,
        }
    }
}

/// Full-wave rectification followed by a Butterworth low-pass; the result
/// is clamped at zero to absorb filter undershoot.
pub fn compute_envelope(filtered: &SampledSignal, cfg: &EnvelopeConfig) -> Result<SampledSignal> {
    if filtered.is_empty() {
        return Err(Error::EmptyInput("cannot take the envelope of an empty signal"));
    }
    let lp = design_butterworth(FilterBand::Lowpass { cutoff: cfg.lowpass_hz }, cfg.order, filtered.fs)?;
    let rectified: Vec<f64> = filtered.samples.iter().map(|v| v.abs()).collect();
    let samples = lp.filter(&rectified).into_iter().map(|v| v.max(0.0)).collect();
    Ok(SampledSignal {
        samples,
        fs: filtered.fs,
    })
}

/// Scales by the recording maximum so the peak is exactly 1.
pub fn normalize_envelope(envelope: &SampledSignal) -> Result<SampledSignal> {
    let max = envelope.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Err(Error::DegenerateSignal("envelope maximum is not positive"));
    }
    Ok(SampledSignal {
        samples: envelope.samples.iter().map(|v| v / max).collect(),
        fs: envelope.fs,
    })
}
