//! Butterworth IIR design by bilinear transform, realized as a cascade of
//! second-order sections.
//!
//! Design runs in zero/pole/gain form: analog prototype poles on the unit
//! circle, frequency transformation to the requested band with pre-warped
//! edges, bilinear mapping to the z-plane, then grouping into biquads.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SampledSignal;

/// Band shape and edge frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterBand {
    Lowpass { cutoff: f64 },
    Highpass { cutoff: f64 },
    Bandpass { low: f64, high: f64 },
    Bandstop { low: f64, high: f64 },
}

impl FilterBand {
    fn edges(&self) -> (f64, Option<f64>) {
        match *self {
            FilterBand::Lowpass { cutoff } | FilterBand::Highpass { cutoff } => (cutoff, None),
            FilterBand::Bandpass { low, high } | FilterBand::Bandstop { low, high } => (low, Some(high)),
        }
    }
}

/// One second-order section, `a0` normalized to 1.
///
/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Pole locations of the section (two roots of `z^2 + a1 z + a2`; a
    /// first-order section reports its pole plus a pole at the origin).
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let a1 = Complex64::new(self.a1, 0.0);
        [(-a1 + disc) * 0.5, (-a1 - disc) * 0.5]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z_inv2 = z_inv * z_inv;
        let num = self.b0 + z_inv * self.b1 + z_inv2 * self.b2;
        let den = 1.0 + z_inv * self.a1 + z_inv2 * self.a2;
        num / den
    }
}

/// Cascade of second-order sections applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl BiquadCascade {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let omega = 2.0 * PI * freq / self.fs;
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.response(freq).norm()
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.magnitude(freq).log10()
    }

    /// Largest pole magnitude over all sections.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0 - 1e-9
    }

    /// Runs the cascade over a slice with zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            // direct form II transposed
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b0 * x + s1;
                s1 = s.b1 * x - s.a1 * y + s2;
                s2 = s.b2 * x - s.a2 * y;
                *v = y;
            }
        }
        out
    }
}

/// Designs a digital Butterworth filter of the given analog order.
///
/// Low/high-pass designs yield `ceil(order / 2)` sections; band-pass and
/// band-stop designs double the order and yield `order` sections.
pub fn design_butterworth(band: FilterBand, order: usize, fs: f64) -> Result<BiquadCascade> {
    if order < 1 {
        return Err(Error::InvalidOrder(order));
    }
    if !fs.is_finite() || fs <= 0.0 {
        return Err(Error::InvalidCutoff(format!("sample rate {fs} Hz must be positive")));
    }
    let nyquist = fs / 2.0;
    let (lo, hi) = band.edges();
    for f in std::iter::once(lo).chain(hi) {
        if !(f > 0.0 && f < nyquist) {
            return Err(Error::InvalidCutoff(format!(
                "{f} Hz outside (0, {nyquist}) for fs = {fs} Hz"
            )));
        }
    }
    if let Some(hi) = hi {
        if lo >= hi {
            return Err(Error::InvalidCutoff(format!(
                "band edges must satisfy low < high, got {lo} >= {hi}"
            )));
        }
    }

    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();

    let mut zpk = Zpk::prototype(order);
    match band {
        FilterBand::Lowpass { cutoff } => zpk.lowpass(warp(cutoff)),
        FilterBand::Highpass { cutoff } => zpk.highpass(warp(cutoff)),
        FilterBand::Bandpass { low, high } => {
            let (w1, w2) = (warp(low), warp(high));
            zpk.bandpass((w1 * w2).sqrt(), w2 - w1)
        }
        FilterBand::Bandstop { low, high } => {
            let (w1, w2) = (warp(low), warp(high));
            zpk.bandstop((w1 * w2).sqrt(), w2 - w1)
        }
    }
    zpk.bilinear(fs2);

    let cascade = BiquadCascade {
        sections: zpk.into_sections(),
        fs,
    };
    debug_assert!(cascade.is_stable());
    Ok(cascade)
}

/// Applies a cascade with zero initial conditions in a single causal pass.
pub fn apply_filter(signal: &SampledSignal, cascade: &BiquadCascade) -> Result<SampledSignal> {
    if signal.is_empty() {
        return Err(Error::EmptyInput("cannot filter an empty signal"));
    }
    Ok(SampledSignal {
        samples: cascade.filter(&signal.samples),
        fs: signal.fs,
    })
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

impl Zpk {
    fn prototype(order: usize) -> Self {
        let n = order as f64;
        let poles = (0..order)
            .map(|i| {
                let m = -(n - 1.0) + 2.0 * i as f64;
                -Complex64::from_polar(1.0, PI * m / (2.0 * n))
            })
            .collect();
        Zpk {
            zeros: Vec::new(),
            poles,
            gain: 1.0,
        }
    }

    fn degree(&self) -> usize {
        self.poles.len() - self.zeros.len()
    }

    fn lowpass(&mut self, wo: f64) {
        let degree = self.degree() as i32;
        self.zeros.iter_mut().for_each(|z| *z *= wo);
        self.poles.iter_mut().for_each(|p| *p *= wo);
        self.gain *= wo.powi(degree);
    }

    fn highpass(&mut self, wo: f64) {
        let degree = self.degree();
        self.gain *= (neg_prod(&self.zeros) / neg_prod(&self.poles)).re;
        self.zeros.iter_mut().for_each(|z| *z = wo / *z);
        self.poles.iter_mut().for_each(|p| *p = wo / *p);
        self.zeros.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    }

    fn bandpass(&mut self, wo: f64, bw: f64) {
        let degree = self.degree();
        let split = |v: &[Complex64]| -> Vec<Complex64> {
            let scaled: Vec<_> = v.iter().map(|x| x * (bw / 2.0)).collect();
            let root = |x: &Complex64| (x * x - wo * wo).sqrt();
            scaled
                .iter()
                .map(|x| x + root(x))
                .chain(scaled.iter().map(|x| x - root(x)))
                .collect()
        };
        self.zeros = split(&self.zeros);
        self.poles = split(&self.poles);
        self.zeros.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
        self.gain *= bw.powi(degree as i32);
    }

    fn bandstop(&mut self, wo: f64, bw: f64) {
        let degree = self.degree();
        self.gain *= (neg_prod(&self.zeros) / neg_prod(&self.poles)).re;
        let split = |v: &[Complex64]| -> Vec<Complex64> {
            let inv: Vec<_> = v.iter().map(|x| (bw / 2.0) / x).collect();
            let root = |x: &Complex64| (x * x - wo * wo).sqrt();
            inv.iter()
                .map(|x| x + root(x))
                .chain(inv.iter().map(|x| x - root(x)))
                .collect()
        };
        self.zeros = split(&self.zeros);
        self.poles = split(&self.poles);
        let notch = Complex64::new(0.0, wo);
        for _ in 0..degree {
            self.zeros.push(notch);
            self.zeros.push(notch.conj());
        }
    }

    fn bilinear(&mut self, fs2: f64) {
        let degree = self.degree();
        let fs2c = Complex64::new(fs2, 0.0);
        let num: Complex64 = self.zeros.iter().map(|z| fs2c - z).product();
        let den: Complex64 = self.poles.iter().map(|p| fs2c - p).product();
        self.gain *= (num / den).re;
        self.zeros.iter_mut().for_each(|z| *z = (fs2c + *z) / (fs2c - *z));
        self.poles.iter_mut().for_each(|p| *p = (fs2c + *p) / (fs2c - *p));
        self.zeros
            .extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    }

    fn into_sections(self) -> Vec<Biquad> {
        let pole_groups = pair_roots(&self.poles);
        let mut zero_groups = pair_roots(&self.zeros);
        zero_groups.resize(pole_groups.len(), (None, None));

        let n = pole_groups.len();
        let per_section = if self.gain > 0.0 {
            self.gain.powf(1.0 / n as f64)
        } else {
            1.0
        };
        let mut sections: Vec<Biquad> = pole_groups
            .iter()
            .zip(&zero_groups)
            .map(|(p, z)| {
                let [b0, b1, b2] = quadratic(*z);
                let [_, a1, a2] = quadratic(*p);
                Biquad {
                    b0: b0 * per_section,
                    b1: b1 * per_section,
                    b2: b2 * per_section,
                    a1,
                    a2,
                }
            })
            .collect();
        if self.gain <= 0.0 {
            let s = &mut sections[0];
            s.b0 *= self.gain;
            s.b1 *= self.gain;
            s.b2 *= self.gain;
        }
        sections
    }
}

fn neg_prod(v: &[Complex64]) -> Complex64 {
    v.iter().map(|x| -x).product()
}

type RootPair = (Option<Complex64>, Option<Complex64>);

const IMAG_TOL: f64 = 1e-10;

/// Groups roots into conjugate pairs and real pairs. Real roots are sorted
/// and paired outermost-first so band-pass sections get one zero at each
/// of z = -1 and z = +1.
fn pair_roots(roots: &[Complex64]) -> Vec<RootPair> {
    let mut groups: Vec<RootPair> = roots
        .iter()
        .filter(|r| r.im > IMAG_TOL)
        .map(|r| (Some(*r), Some(r.conj())))
        .collect();
    let mut reals: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= IMAG_TOL).map(|r| r.re).collect();
    reals.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (0usize, reals.len());
    while hi - lo >= 2 {
        groups.push((
            Some(Complex64::new(reals[lo], 0.0)),
            Some(Complex64::new(reals[hi - 1], 0.0)),
        ));
        lo += 1;
        hi -= 1;
    }
    if hi - lo == 1 {
        groups.push((Some(Complex64::new(reals[lo], 0.0)), None));
    }
    groups
}

/// Coefficients of `(1 - r1 z^-1)(1 - r2 z^-1)`.
fn quadratic(pair: RootPair) -> [f64; 3] {
    match pair {
        (Some(r1), Some(r2)) => [1.0, -(r1 + r2).re, (r1 * r2).re],
        (Some(r), None) | (None, Some(r)) => [1.0, -r.re, 0.0],
        (None, None) => [1.0, 0.0, 0.0],
    }
}
