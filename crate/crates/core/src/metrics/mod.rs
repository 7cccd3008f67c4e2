//! The four envelope metrics and the per-segment report built from them.

mod fft;
mod report;

pub use fft::{fft, fft_padded, ifft, Spectrum};
pub use report::{Aggregate, MetricsReport, SegmentMetrics, METRIC_NAMES};

use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("metric input"));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `<a, b> / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    cosine_unchecked(a, b)
}

fn cosine_unchecked(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateSignal("cosine similarity of a zero-norm sequence"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the one-sided magnitude spectra over bins
/// `0..=n/2`, or `1..=n/2` when `include_dc` is false.
pub fn fft_cosine_sim(a: &[f64], b: &[f64], include_dc: bool) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len().next_power_of_two();
    let first = usize::from(!include_dc);
    let ma = fft_padded(a, n).one_sided_magnitudes();
    let mb = fft_padded(b, n).one_sided_magnitudes();
    if first >= ma.len() {
        return Err(Error::DegenerateSignal("no non-DC bins in a length-1 spectrum"));
    }
    cosine_unchecked(&ma[first..], &mb[first..])
}
