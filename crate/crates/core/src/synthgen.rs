//! Synthetic arm-motion recordings with a known IMU-to-envelope mapping.
//!
//! Each repetition raises the joint angle with a Laplacian angular-velocity
//! profile (a sharp speed peak mid-lift), holds, lowers more slowly, and
//! rests. The ground-truth envelope is
//! `e[t] = clamp(gain * mean(|gyro_y[t - lag - W + 1 ..= t - lag]|), 0, 1)`
//! with a causal moving average of width `W`, and the raw EMG is `e[t]` times
//! a unit-RMS 20-300 Hz noise carrier, plus mains hum and sensor noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_recording, Motion, RawRecording, RecordingMeta};
use crate::error::{Error, Result};
use crate::signal::{design_butterworth, preprocess_emg, FilterBand, FilterChainConfig, SampledSignal, DEFAULT_FS};

const GRAVITY: f64 = 9.81;

/// Gaussian noise standard deviations added per channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// m/s^2
    pub accel: f64,
    /// deg/s
    pub gyro: f64,
    /// Additive EMG sensor noise, in units of the carrier RMS.
    pub emg: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            accel: 0.05,
            gyro: 1.0,
            emg: 0.01,
        }
    }
}

impl NoiseConfig {
    pub const SILENT: NoiseConfig = NoiseConfig {
        accel: 0.0,
        gyro: 0.0,
        emg: 0.0,
    };
}

/// Parameters of one synthetic session.
///
/// Exactly `n_reps` envelope peaks are recovered by the default
/// segmentation for gyro noise up to 5 deg/s and accel noise up to
/// 0.5 m/s^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionProfile {
    pub motion: Motion,
    pub n_reps: usize,
    pub fs: f64,
    /// Joint excursion per repetition, degrees.
    pub range_deg: f64,
    /// Scale of the Laplacian speed profile while lifting, seconds.
    pub lift_scale_s: f64,
    /// Scale of the speed profile while lowering, seconds.
    pub lower_scale_s: f64,
    /// Length of each movement phase in units of its scale.
    pub phase_span: f64,
    pub hold_s: f64,
    pub rest_s: f64,
    pub lead_in_s: f64,
    pub tail_s: f64,
    /// Per-repetition range is drawn from `[1 - j, 1] * range_deg`.
    pub amplitude_jitter: f64,
    /// Per-repetition timing factors are drawn from `1 +- j/2`.
    pub timing_jitter: f64,
    /// Envelope units per deg/s. `None` picks the gain that puts a nominal
    /// repetition's peak at 0.9.
    pub burst_gain: Option<f64>,
    /// Ground-truth lag behind the gyroscope, samples.
    pub lag: usize,
    /// Width of the causal moving average over `|gyro_y|`, samples.
    pub smooth: usize,
    pub noise: NoiseConfig,
    /// 50 Hz hum amplitude, in units of the carrier RMS.
    pub mains: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            motion: Motion::BicepCurl,
            n_reps: 7,
            fs: DEFAULT_FS,
            range_deg: 100.0,
            lift_scale_s: 0.4,
            lower_scale_s: 0.7,
            phase_span: 4.0,
            hold_s: 0.2,
            rest_s: 0.4,
            lead_in_s: 1.0,
            tail_s: 1.0,
            amplitude_jitter: 0.1,
            timing_jitter: 0.1,
            burst_gain: None,
            lag: 30,
            smooth: 250,
            noise: NoiseConfig::default(),
            mains: 0.1,
        }
    }
}

impl MotionProfile {
    pub fn for_motion(motion: Motion) -> Self {
        let base = Self {
            motion,
            ..Self::default()
        };
        match motion {
            Motion::BicepCurl => base,
            Motion::TricepExtension => Self {
                range_deg: 90.0,
                ..base
            },
            Motion::Supination | Motion::Pronation => Self {
                range_deg: 80.0,
                lift_scale_s: 0.35,
                lower_scale_s: 0.6,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fs", self.fs),
            ("range_deg", self.range_deg),
            ("lift_scale_s", self.lift_scale_s),
            ("lower_scale_s", self.lower_scale_s),
            ("phase_span", self.phase_span),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("hold_s", self.hold_s),
            ("rest_s", self.rest_s),
            ("lead_in_s", self.lead_in_s),
            ("tail_s", self.tail_s),
            ("mains", self.mains),
            ("noise.accel", self.noise.accel),
            ("noise.gyro", self.noise.gyro),
            ("noise.emg", self.noise.emg),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_reps < 1 {
            return Err(Error::Config("n_reps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) || !(0.0..1.0).contains(&self.timing_jitter) {
            return Err(Error::Config("jitter fractions must lie in [0, 1)".into()));
        }
        if self.smooth < 1 {
            return Err(Error::Config("smooth must be at least 1 sample".into()));
        }
        if let Some(g) = self.burst_gain {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("burst_gain must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Nominal repetition length, seconds.
    pub fn rep_period_s(&self) -> f64 {
        self.phase_span * (self.lift_scale_s + self.lower_scale_s) + self.hold_s + self.rest_s
    }

    /// The gain in use: explicit, or calibrated so a full-range repetition
    /// peaks at 0.9.
    pub fn gain(&self) -> f64 {
        self.burst_gain.unwrap_or_else(|| {
            let lift = laplace_increments(
                self.phase_len(self.lift_scale_s),
                self.lift_scale_s * self.fs,
                self.range_deg,
            );
            let speed: Vec<f64> = lift.iter().map(|d| d.abs() * self.fs).collect();
            let peak = moving_average(&speed, self.smooth).into_iter().fold(0.0, f64::max);
            0.9 / peak
        })
    }

    fn phase_len(&self, scale_s: f64) -> usize {
        ((self.phase_span * scale_s * self.fs).round() as usize).max(2)
    }
}

/// Angle increments of one movement phase: a Laplacian bump centred in
/// `n` samples, scaled to sum to `total` degrees.
fn laplace_increments(n: usize, scale: f64, total: f64) -> Vec<f64> {
    let centre = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n).map(|i| (-(i as f64 - centre).abs() / scale).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v * total / sum).collect()
}

/// Causal mean over the last `w` samples, treating samples before 0 as 0.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for (t, v) in x.iter().enumerate() {
        acc += v;
        if t >= w {
            acc -= x[t - w];
        }
        out.push(acc / w as f64);
    }
    out
}

/// Forward then backward moving average; zero phase.
fn smooth_zero_phase(x: &[f64], w: usize) -> Vec<f64> {
    let fwd = moving_average(x, w);
    let rev: Vec<f64> = fwd.into_iter().rev().collect();
    let mut back = moving_average(&rev, w);
    back.reverse();
    back
}

/// Band-passed white noise whose post-filter-chain amplitude is flattened,
/// so the pipeline envelope of `e * carrier` tracks `e` closely.
fn carrier(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Result<Vec<f64>> {
    const AGC_WINDOW: usize = 20;
    const AGC_PASSES: usize = 2;
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let band = design_butterworth(FilterBand::Bandpass { low: 20.0, high: 300.0 }, 4, fs)?;
    let mut c = band.filter(&white);
    let chain = FilterChainConfig::default();
    for _ in 0..AGC_PASSES {
        let filtered = preprocess_emg(&SampledSignal { samples: c.clone(), fs }, &chain)?;
        let rect: Vec<f64> = filtered.samples.iter().map(|v| v.abs()).collect();
        let level = smooth_zero_phase(&rect, AGC_WINDOW);
        let floor = 0.25 * level.iter().sum::<f64>() / n as f64;
        c.iter_mut().zip(&level).for_each(|(v, l)| *v /= l.max(floor));
    }
    let rms = (c.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    c.iter_mut().for_each(|v| *v /= rms);
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub recording: RawRecording,
    /// Ground-truth envelope, one value per sample.
    pub truth: Vec<f64>,
    /// First sample of each repetition's lift.
    pub rep_onsets: Vec<usize>,
}

/// Ground truth from a gyro_y trace, as defined in the module docs.
pub fn truth_from_gyro(gyro_y: &[f64], gain: f64, lag: usize, smooth: usize) -> Vec<f64> {
    let speed: Vec<f64> = gyro_y.iter().map(|v| v.abs()).collect();
    let avg = moving_average(&speed, smooth);
    (0..gyro_y.len())
        .map(|t| {
            if t >= lag {
                (gain * avg[t - lag]).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Deterministic in `(profile, seed)`.
pub fn generate_recording(profile: &MotionProfile, seed: u64, subject: &str, day: u32) -> Result<SyntheticRecording> {
    profile.validate()?;
    let p = profile;
    let fs = p.fs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let secs = |s: f64| (s * fs).round() as usize;

    let mut delta = vec![0.0; secs(p.lead_in_s)];
    let mut rep_onsets = Vec::with_capacity(p.n_reps);
    for _ in 0..p.n_reps {
        let amp = p.range_deg * (1.0 - p.amplitude_jitter * rng.random::<f64>());
        let mut jitter = || 1.0 + p.timing_jitter * (rng.random::<f64>() - 0.5);
        let (up_s, down_s, rest_s) = (
            p.lift_scale_s * jitter(),
            p.lower_scale_s * jitter(),
            p.rest_s * jitter(),
        );
        rep_onsets.push(delta.len());
        delta.extend(laplace_increments(p.phase_len(up_s), up_s * fs, amp));
        delta.extend(std::iter::repeat_n(0.0, secs(p.hold_s)));
        delta.extend(laplace_increments(p.phase_len(down_s), down_s * fs, -amp));
        delta.extend(std::iter::repeat_n(0.0, secs(rest_s)));
    }
    delta.extend(std::iter::repeat_n(0.0, secs(p.tail_s)));
    let n = delta.len();

    let mut theta = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in &delta {
        acc += d;
        theta.push(acc);
    }

    let gauss = |sd: f64| Normal::new(0.0, sd).expect("validated noise level");
    let (na, ng) = (gauss(p.noise.accel), gauss(p.noise.gyro));
    let mut imu: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    for t in 0..n {
        let rad = theta[t].to_radians();
        let omega = delta[t] * fs;
        let clean = [GRAVITY * rad.sin(), 0.0, GRAVITY * rad.cos(), 0.0, omega, 0.0];
        for (c, v) in clean.into_iter().enumerate() {
            let noise = if c < 3 {
                na.sample(&mut rng)
            } else {
                ng.sample(&mut rng)
            };
            imu[c].push(v + noise);
        }
    }

    let truth = truth_from_gyro(&imu[4], p.gain(), p.lag, p.smooth);
    let carrier = carrier(&mut rng, n, fs)?;
    let ne = gauss(p.noise.emg);
    let emg: Vec<f64> = (0..n)
        .map(|t| {
            let hum = p.mains * (2.0 * PI * 50.0 * t as f64 / fs).sin();
            truth[t] * carrier[t] + hum + ne.sample(&mut rng)
        })
        .collect();

    let meta = RecordingMeta {
        subject: subject.to_string(),
        motion: Some(p.motion),
        day,
        fs,
    };
    Ok(SyntheticRecording {
        recording: RawRecording::aligned(emg, imu, meta)?,
        truth,
        rep_onsets,
    })
}

/// `<stem>.truth.txt`, one ground-truth value per line.
pub fn truth_path(csv: &Path) -> PathBuf {
    csv.with_extension("truth.txt")
}

/// Generates `sessions` recordings into `dir` as `<motion>_day<d>.csv` with
/// metadata and ground-truth sidecars. Session `d` uses seed `seed + d`.
pub fn write_sessions(dir: &Path, profile: &MotionProfile, sessions: usize, seed: u64) -> Result<Vec<PathBuf>> {
    profile.validate()?;
    if sessions < 1 {
        return Err(Error::Config("sessions must be at least 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(sessions);
    for day in 1..=sessions as u32 {
        let rec = generate_recording(profile, seed.wrapping_add(day as u64), "synth", day)?;
        let path = dir.join(format!("{}_day{day}.csv", profile.motion));
        write_recording(&rec.recording, &path)?;
        let mut text = String::with_capacity(rec.truth.len() * 24);
        for v in &rec.truth {
            text.push_str(&format!("{v:.16e}\n"));
        }
        let tp = truth_path(&path);
        fs::write(&tp, text).map_err(|e| Error::io(&tp, e))?;
        paths.push(path);
    }
    Ok(paths)
}
