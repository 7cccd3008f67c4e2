use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{cosine_sim, fft_cosine_sim, mae, mse};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub segment_id: String,
    pub mse: f64,
    pub mae: f64,
    pub cosine: f64,
    pub fft_cosine: f64,
}

impl SegmentMetrics {
    pub fn compute(segment_id: impl Into<String>, pred: &[f64], target: &[f64], include_dc: bool) -> Result<Self> {
        Ok(Self {
            segment_id: segment_id.into(),
            mse: mse(pred, target)?,
            mae: mae(pred, target)?,
            cosine: cosine_sim(pred, target)?,
            fft_cosine: fft_cosine_sim(pred, target, include_dc)?,
        })
    }
}

/// One value per metric, in table order: MSE, MAE, cosine, FFT cosine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    pub mae: f64,
    pub cosine: f64,
    pub fft_cosine: f64,
}

impl Aggregate {
    fn values(&self) -> [f64; 4] {
        [self.mse, self.mae, self.cosine, self.fft_cosine]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub motion: String,
    pub include_dc: bool,
    pub rows: Vec<SegmentMetrics>,
    pub best: Aggregate,
    pub worst: Aggregate,
    pub average: Aggregate,
}

pub const METRIC_NAMES: [&str; 4] = ["MSE", "MAE", "Cosine Sim", "FFT Cosine"];

impl MetricsReport {
    /// Aggregates per-segment rows. Lower is better for MSE and MAE, higher
    /// for the two similarities; averages are plain means in row order.
    pub fn from_rows(motion: impl Into<String>, include_dc: bool, rows: Vec<SegmentMetrics>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData(
                "metrics report needs at least one segment".into(),
            ));
        }
        let col = |f: fn(&SegmentMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let cols = [col(|r| r.mse), col(|r| r.mae), col(|r| r.cosine), col(|r| r.fft_cosine)];
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let agg = |pick_low: &dyn Fn(&[f64]) -> f64, pick_high: &dyn Fn(&[f64]) -> f64| Aggregate {
            mse: pick_low(&cols[0]),
            mae: pick_low(&cols[1]),
            cosine: pick_high(&cols[2]),
            fft_cosine: pick_high(&cols[3]),
        };
        Ok(Self {
            motion: motion.into(),
            include_dc,
            best: agg(&min, &max),
            worst: agg(&max, &min),
            average: agg(&mean, &mean),
            rows,
        })
    }

    /// Long-format CSV: one line per (aggregate, metric) followed by one
    /// line per segment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,mse,mae,cosine_sim,fft_cosine\n");
        for (name, a) in [("best", &self.best), ("worst", &self.worst), ("average", &self.average)] {
            let [m, e, c, f] = a.values();
            let _ = writeln!(out, "{name},{m:.17e},{e:.17e},{c:.17e},{f:.17e}");
        }
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.segment_id, r.mse, r.mae, r.cosine, r.fft_cosine
            );
        }
        out
    }

    /// Human-readable Motion / Metric / Best / Worst / Average grid.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:<11} {:>8} {:>8} {:>8}",
            "Motion", "Metric", "Best", "Worst", "Average"
        );
        let (b, w, a) = (self.best.values(), self.worst.values(), self.average.values());
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let motion = if i == 0 { self.motion.as_str() } else { "" };
            let _ = writeln!(out, "{motion:<18} {name:<11} {:>8.4} {:>8.4} {:>8.4}", b[i], w[i], a[i]);
        }
        let _ = writeln!(
            out,
            "segments: {}; FFT cosine over bins {}..=n/2",
            self.rows.len(),
            if self.include_dc { 0 } else { 1 }
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, v: [f64; 4]) -> SegmentMetrics {
        SegmentMetrics {
            segment_id: id.into(),
            mse: v[0],
            mae: v[1],
            cosine: v[2],
            fft_cosine: v[3],
        }
    }

    #[test]
    fn aggregates_pick_direction_per_metric() {
        let r = MetricsReport::from_rows(
            "bicep_curl",
            true,
            vec![row("a", [0.02, 0.1, 0.95, 0.8]), row("b", [0.07, 0.2, 0.90, 0.6])],
        )
        .unwrap();
        assert_eq!(r.best.values(), [0.02, 0.1, 0.95, 0.8]);
        assert_eq!(r.worst.values(), [0.07, 0.2, 0.90, 0.6]);
        assert!((r.average.mse - 0.045).abs() < 1e-15);
    }

    #[test]
    fn single_segment_collapses() {
        let r = MetricsReport::from_rows("m", true, vec![row("a", [0.1, 0.2, 0.3, 0.4])]).unwrap();
        assert_eq!(r.best, r.worst);
        assert_eq!(r.best, r.average);
    }

    #[test]
    fn perfect_prediction() {
        let x = [0.1, 0.5, 0.9, 0.4, 0.2];
        let m = SegmentMetrics::compute("s", &x, &x, true).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        assert!((m.cosine - 1.0).abs() < 1e-15 && (m.fft_cosine - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_and_csv_layout() {
        let r = MetricsReport::from_rows("supination", false, vec![row("a", [0.1, 0.2, 0.3, 0.4])]).unwrap();
        let t = r.table();
        for name in METRIC_NAMES.iter().chain(&["Best", "Worst", "Average", "supination"]) {
            assert!(t.contains(name), "{name}");
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(3).unwrap().starts_with("average,"));
        assert!(MetricsReport::from_rows("m", true, vec![]).is_err());
    }
}
