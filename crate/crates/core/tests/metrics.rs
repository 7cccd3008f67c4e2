use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use emg_forge::metrics::{cosine_sim, fft, fft_cosine_sim, ifft, mae, mse, MetricsReport, SegmentMetrics};

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn signal(max_pow: u32) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_pow).prop_flat_map(|p| prop::collection::vec(-10.0f64..10.0, 1usize << p))
}

proptest! {
    #[test]
    fn fft_matches_naive_dft(x in signal(9)) {
        let spec = fft(&x);
        for (a, b) in spec.bins.iter().zip(naive_dft(&x)) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn parseval(x in prop::collection::vec(-10.0f64..10.0, 1..700)) {
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((fft(&x).energy() - energy).abs() <= 1e-9 * energy.max(1.0));
    }

    #[test]
    fn inverse_recovers_padded_input(x in prop::collection::vec(-10.0f64..10.0, 1..300)) {
        let back = ifft(&fft(&x));
        prop_assert_eq!(back.len(), x.len().next_power_of_two());
        for (t, c) in back.iter().enumerate() {
            let expected = x.get(t).copied().unwrap_or(0.0);
            prop_assert!((c.re - expected).abs() < 1e-9 && c.im.abs() < 1e-9);
        }
    }

    #[test]
    fn circular_shift_keeps_magnitudes(x in signal(8), shift in 0usize..256) {
        let n = x.len();
        let rolled: Vec<f64> = (0..n).map(|t| x[(t + n - shift % n) % n]).collect();
        let (a, b) = (fft(&x), fft(&rolled));
        for (p, q) in a.bins.iter().zip(&b.bins) {
            prop_assert!((p.norm() - q.norm()).abs() < 1e-9);
        }
        if x.iter().any(|v| *v != 0.0) {
            prop_assert!((fft_cosine_sim(&x, &rolled, true).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_symmetric_scale_invariant_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 2..100),
        scale in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * ((seed >> (i % 60)) & 1) as f64 - 0.5).collect();
        prop_assume!(a.iter().any(|v| v.abs() > 1e-6) && b.iter().any(|v| v.abs() > 1e-6));
        let ab = cosine_sim(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_sim(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
        prop_assert!((cosine_sim(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_squared_bounded_by_mse(
        pair in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..200),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let (e1, e2) = (mae(&a, &b).unwrap(), mse(&a, &b).unwrap());
        prop_assert!(e1 * e1 <= e2 * (1.0 + 1e-12) + 1e-15);
        prop_assert!(e1 >= 0.0 && e2 >= 0.0);
    }

    #[test]
    fn aggregates_bracket_rows(values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10)) {
        let rows: Vec<SegmentMetrics> = values
            .iter()
            .enumerate()
            .map(|(i, &(m, c))| SegmentMetrics {
                segment_id: format!("s{i}"),
                mse: m,
                mae: m.sqrt(),
                cosine: c,
                fft_cosine: c,
            })
            .collect();
        let report = MetricsReport::from_rows("bicep_curl", true, rows).unwrap();
        prop_assert!(report.best.mse <= report.average.mse + 1e-15);
        prop_assert!(report.average.mse <= report.worst.mse + 1e-15);
        prop_assert!(report.best.cosine + 1e-15 >= report.average.cosine);
        prop_assert!(report.average.cosine + 1e-15 >= report.worst.cosine);
    }
}

#[test]
fn named_examples() {
    assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
    assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
    assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    let fs = 1000.0;
    let tone = |f: f64| {
        (0..1024)
            .map(|t| (2.0 * PI * f * t as f64 / fs).sin())
            .collect::<Vec<_>>()
    };
    assert!(fft_cosine_sim(&tone(5.0), &tone(50.0), true).unwrap() <= 0.05);
}
