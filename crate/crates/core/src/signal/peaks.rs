use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open sample range `[start, end)` around one detected peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentBounds {
    pub start: usize,
    pub end: usize,
    pub peak: usize,
}

impl SegmentBounds {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Indices `i` with `x[i-1] < x[i] >= x[i+1]`. On a plateau only the
/// leftmost sample qualifies. The first and last samples never qualify.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    (1..x.len() - 1)
        .filter(|&i| x[i - 1] < x[i] && x[i] >= x[i + 1])
        .collect()
}

/// Greedy peak picking: local maxima are visited tallest first (ties go to
/// the lower index) and accepted when at least `min_distance` samples away
/// from every peak accepted so far. At most `top_k` peaks are returned,
/// sorted by index.
pub fn detect_peaks(x: &[f64], min_distance: usize, top_k: usize) -> Result<Vec<usize>> {
    if x.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: x.len(),
        });
    }
    if min_distance < 1 || top_k < 1 {
        return Err(Error::Config(format!(
            "min_distance ({min_distance}) and top_k ({top_k}) must be at least 1"
        )));
    }
    let mut candidates = local_maxima(x);
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(top_k);
    for c in candidates {
        if chosen.len() == top_k {
            break;
        }
        if chosen.iter().all(|&p| p.abs_diff(c) >= min_distance) {
            chosen.push(c);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Splits `[0, signal_len)` at the midpoints `floor((p[i] + p[i+1]) / 2)`
/// between successive peaks.
pub fn segment_by_peaks(peaks: &[usize], signal_len: usize) -> Result<Vec<SegmentBounds>> {
    let Some(&last) = peaks.last() else {
        return Err(Error::InvalidPeaks("no peaks given".into()));
    };
    if last >= signal_len {
        return Err(Error::InvalidPeaks(format!(
            "peak {last} out of range for signal length {signal_len}"
        )));
    }
    if let Some(w) = peaks.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidPeaks(format!(
            "peaks must be strictly increasing, found {} then {}",
            w[0], w[1]
        )));
    }

    let mut bounds = Vec::with_capacity(peaks.len());
    let mut start = 0;
    for (i, &peak) in peaks.iter().enumerate() {
        let end = match peaks.get(i + 1) {
            Some(&next) => (peak + next) / 2,
            None => signal_len,
        };
        bounds.push(SegmentBounds { start, end, peak });
        start = end;
    }
    Ok(bounds)
}
