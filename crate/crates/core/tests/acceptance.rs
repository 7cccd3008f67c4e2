//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emg_forge::dataio::{build_segments, split_dataset, MergedSegment, PipelineConfig};
use emg_forge::metrics::{cosine_sim, fft, MetricsReport, METRIC_NAMES};
use emg_forge::model::{
    forward, forward_on_tape, forward_streaming, receptive_field, Activation, ModelConfig, ModelWeights, StreamState,
    TapeParams, IMU_CHANNELS,
};
use emg_forge::signal::{design_butterworth, FilterBand, DEFAULT_FS};
use emg_forge::synthgen::{generate_recording, MotionProfile};
use emg_forge::tensor::{Tape, Tensor};
use emg_forge::train::{
    evaluate, evaluate_predictions, train, validation_loss, EarlyStopping, StopDecision, TrainConfig,
};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, channels: usize, len: usize, scale: f64) -> Tensor {
    let data = (0..channels * len).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(channels, len, data).unwrap()
}

/// He-initialized weights with random biases and a non-trivial input scaler.
fn random_weights(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelWeights {
    let mut w = ModelWeights::init(cfg, rng.random()).unwrap();
    for (_, k) in w.kernels_mut() {
        k.bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    for c in 0..IMU_CHANNELS {
        w.scaler.scale[c] = rng.random_range(0.5..1.5);
        w.scaler.shift[c] = rng.random_range(-0.2..0.2);
    }
    w
}

fn weighted_output(weights: &ModelWeights, x: &Tensor, r: &Tensor) -> f64 {
    let y = forward(weights, x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Fourth-order central difference of `f` at `v`.
fn central_diff(f: &mut dyn FnMut(f64) -> f64, v: f64, h: f64) -> f64 {
    let near = f(v + h) - f(v - h);
    let far = f(v + 2.0 * h) - f(v - 2.0 * h);
    (8.0 * near - far) / (12.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ModelConfig {
        kernel_size: 2,
        blocks: 2,
        residual_channels: 3,
        skip_channels: 3,
        window: 4,
        activation: Activation::Gated,
    };
    let t = 32;
    let weights = random_weights(&cfg, &mut rng);
    let x = random_tensor(&mut rng, IMU_CHANNELS, t, 1.0);
    let r = random_tensor(&mut rng, 1, t, 1.0);

    let mut tape = Tape::new();
    let params = TapeParams::register(&mut tape, &weights);
    let xv = tape.param(x.clone());
    let y = forward_on_tape(&weights, &params, &mut tape, xv).map_err(|e| e.to_string())?;
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).map_err(|e| e.to_string())?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;

    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let param_vars = params.vars();
    for (p, var) in param_vars.iter().enumerate() {
        let n = weights.params()[p].1.data().len();
        for i in 0..n {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[i]);
            let mut f = |v: f64| {
                let mut w = weights.clone();
                w.params_mut()[p].1.data_mut()[i] = v;
                weighted_output(&w, &x, &r)
            };
            let v0 = weights.params()[p].1.data()[i];
            worst = worst.max(rel_err(analytic, central_diff(&mut f, v0, h)));
            checked += 1;
        }
    }
    let gx = grads.get(xv).ok_or("input received no gradient")?;
    for i in 0..x.data().len() {
        let mut f = |v: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            weighted_output(&weights, &xp, &r)
        };
        worst = worst.max(rel_err(gx.data()[i], central_diff(&mut f, x.data()[i], h)));
        checked += 1;
    }
    ensure(worst < 1e-6, || {
        format!("max relative error {worst:.3e} over {checked} entries")
    })?;
    Ok(format!("max relative error {worst:.2e} over {checked} entries"))
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        kernel_size: rng.random_range(2..=4),
        blocks: rng.random_range(1..=4),
        residual_channels: rng.random_range(1..=5),
        skip_channels: rng.random_range(1..=5),
        window: rng.random_range(1..=8),
        activation: if rng.random() {
            Activation::Gated
        } else {
            Activation::Relu
        },
    }
}

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let cfg = random_config(&mut rng);
        let weights = random_weights(&cfg, &mut rng);
        let t = rng.random_range(8..120);
        let x = random_tensor(&mut rng, IMU_CHANNELS, t, 2.0);
        let cut = rng.random_range(1..t);
        let mut x2 = x.clone();
        for c in 0..IMU_CHANNELS {
            for s in cut..t {
                x2.set(c, s, x.get(c, s) + rng.random_range(-5.0..5.0));
            }
        }
        let (y, y2) = (forward(&weights, &x).unwrap(), forward(&weights, &x2).unwrap());
        ensure(y.data()[..cut] == y2.data()[..cut], || {
            format!("case {case} {cfg:?}: output before {cut} changed")
        })?;
        ensure(y.data()[cut..] != y2.data()[cut..], || {
            format!("case {case} {cfg:?}: perturbation had no effect at all")
        })?;
    }
    Ok("100 configs, past outputs bit-identical".into())
}

fn receptive_field_tightness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    for k in [2, 3] {
        for n in 1..=6u32 {
            for w in [1, 8, 16] {
                let cfg = ModelConfig {
                    kernel_size: k,
                    blocks: n as usize,
                    residual_channels: 3,
                    skip_channels: 2,
                    window: w,
                    activation: Activation::Gated,
                };
                let expected = 1 + (k - 1) * (2usize.pow(n) - 1) + (w - 1);
                let rf = receptive_field(&cfg);
                ensure(rf.total == expected, || {
                    format!("{cfg:?}: reported R_total {} != {expected}", rf.total)
                })?;
                if w == 1 {
                    let eq1 = 1 + (k - 1) * (2usize.pow(n) - 1);
                    ensure(rf.blocks == eq1 && rf.total == eq1, || {
                        format!("{cfg:?}: R_blocks {}", rf.blocks)
                    })?;
                }

                let weights = random_weights(&cfg, &mut rng);
                let t = expected + 24;
                let x = random_tensor(&mut rng, IMU_CHANNELS, t, 1.0);
                let mut tape = Tape::new();
                let params = TapeParams::register(&mut tape, &weights);
                let xv = tape.param(x);
                let y = forward_on_tape(&weights, &params, &mut tape, xv).map_err(|e| e.to_string())?;
                let mut pick = Tensor::zeros(1, t);
                pick.set(0, t - 1, 1.0);
                let pv = tape.constant(pick);
                let prod = tape.mul(y, pv).map_err(|e| e.to_string())?;
                let loss = tape.sum(prod);
                let grads = tape.backward(loss).map_err(|e| e.to_string())?;
                let gx = grads.get(xv).ok_or("input received no gradient")?;
                let touched: Vec<usize> = (0..t)
                    .filter(|&s| (0..IMU_CHANNELS).any(|c| gx.get(c, s) != 0.0))
                    .collect();
                let first = *touched.first().ok_or("empty gradient support")?;
                let span = t - first;
                ensure(span == expected, || {
                    format!("{cfg:?}: gradient support {span}, expected {expected}")
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} configs, support = 1 + (k-1)(2^N-1) + (w-1)"))
}

fn streaming_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig::default();
    let weights = random_weights(&cfg, &mut rng);
    let t = 10_000;
    let x = random_tensor(&mut rng, IMU_CHANNELS, t, 3.0);
    let batch = forward(&weights, &x).map_err(|e| e.to_string())?;
    let mut state = StreamState::new(&cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut frame = [0.0; IMU_CHANNELS];
    for s in 0..t {
        for (c, f) in frame.iter_mut().enumerate() {
            *f = x.get(c, s);
        }
        let y = forward_streaming(&weights, &mut state, &frame).map_err(|e| e.to_string())?;
        worst = worst.max((y - batch.data()[s]).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("10^4 samples, max deviation {worst:.2e}"))
}

fn filter_responses() -> Outcome {
    let fs = DEFAULT_FS;
    let db = |band: FilterBand, f: f64| -> Result<f64, String> {
        Ok(design_butterworth(band, 4, fs)
            .map_err(|e| e.to_string())?
            .magnitude_db(f))
    };
    let hp = FilterBand::Highpass { cutoff: 70.0 };
    let notch = FilterBand::Bandstop { low: 48.0, high: 52.0 };
    let bp = FilterBand::Bandpass { low: 20.0, high: 300.0 };
    let checks = [
        ("HP70 @70 Hz", db(hp, 70.0)?, (-3.5, -2.5)),
        ("HP70 @10 Hz", db(hp, 10.0)?, (f64::NEG_INFINITY, -40.0)),
        ("BS48-52 @50 Hz", db(notch, 50.0)?, (f64::NEG_INFINITY, -20.0)),
        ("BS48-52 @40 Hz", db(notch, 40.0)?, (-3.0, f64::INFINITY)),
        ("BS48-52 @60 Hz", db(notch, 60.0)?, (-3.0, f64::INFINITY)),
        ("BP20-300 @77.5 Hz", db(bp, 77.5)?, (-0.5, f64::INFINITY)),
    ];
    let mut parts = Vec::new();
    for (label, value, (lo, hi)) in checks {
        ensure(value >= lo && value <= hi, || format!("{label} = {value:.3} dB"))?;
        parts.push(format!("{label} {value:.2} dB"));
    }
    Ok(parts.join(", "))
}

fn naive_dft(x: &[f64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn fft_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dft_err, mut parseval_err, mut shift_err) = (0.0f64, 0.0f64, 0.0f64);
    for n in 2..=1024usize {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = fft(&x);
        let m = spec.n();
        ensure(m == n.next_power_of_two(), || format!("n = {n}: transform length {m}"))?;
        let reference = naive_dft(&x, m);
        for (a, b) in spec.bins.iter().zip(&reference) {
            dft_err = dft_err.max((a - b).norm());
        }
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        parseval_err = parseval_err.max((spec.energy() - time_energy).abs());

        if n.is_power_of_two() {
            let s = rng.random_range(1..n.max(2));
            let shifted: Vec<f64> = (0..n).map(|t| x[(t + n - s % n) % n]).collect();
            let shifted_spec = fft(&shifted);
            for (a, b) in spec.bins.iter().zip(&shifted_spec.bins) {
                shift_err = shift_err.max((a.norm() - b.norm()).abs());
            }
        }
    }
    ensure(dft_err < 1e-9, || format!("max |FFT - DFT| {dft_err:.3e}"))?;
    ensure(parseval_err < 1e-9, || format!("Parseval error {parseval_err:.3e}"))?;
    ensure(shift_err < 1e-9, || format!("shift magnitude error {shift_err:.3e}"))?;
    Ok(format!(
        "n = 2..1024: DFT err {dft_err:.1e}, Parseval err {parseval_err:.1e}, shift err {shift_err:.1e}"
    ))
}

fn segmentation() -> Outcome {
    let pipeline = PipelineConfig::default();
    let mut recordings = 0;
    for motion in emg_forge::dataio::Motion::ALL {
        for seed in 0..5 {
            let profile = MotionProfile::for_motion(motion);
            let rec = generate_recording(&profile, 1000 + seed, "s", 1).map_err(|e| e.to_string())?;
            let segs = build_segments(&rec.recording, &pipeline).map_err(|e| e.to_string())?;
            let label = format!("{motion} seed {seed}");
            ensure(segs.len() == 7, || format!("{label}: {} segments", segs.len()))?;
            ensure(segs[0].bounds.start == 0, || {
                format!("{label}: first segment starts late")
            })?;
            ensure(segs[6].bounds.end == rec.recording.len(), || {
                format!("{label}: last segment ends early")
            })?;
            for (i, pair) in segs.windows(2).enumerate() {
                let (a, b) = (&pair[0].bounds, &pair[1].bounds);
                ensure(a.end == b.start, || {
                    format!("{label}: gap or overlap after segment {i}")
                })?;
                ensure(a.end == (a.peak + b.peak) / 2, || {
                    format!("{label}: boundary {} not a midpoint", a.end)
                })?;
            }
            for (s, onset) in segs.iter().zip(&rec.rep_onsets) {
                let b = s.bounds;
                ensure(b.start <= b.peak && b.peak < b.end, || {
                    format!("{label}: peak outside segment")
                })?;
                ensure(b.peak >= *onset, || {
                    format!("{label}: peak {} precedes rep onset {onset}", b.peak)
                })?;
            }
            recordings += 1;
        }
    }
    Ok(format!(
        "{recordings} recordings, 7 contiguous midpoint-bounded segments each"
    ))
}

fn synthetic_sessions(sessions: u32) -> Result<Vec<MergedSegment>, String> {
    let profile = MotionProfile::default();
    let mut segments = Vec::new();
    for day in 1..=sessions {
        let rec = generate_recording(&profile, 100 + day as u64, "synth", day).map_err(|e| e.to_string())?;
        segments.extend(build_segments(&rec.recording, &PipelineConfig::default()).map_err(|e| e.to_string())?);
    }
    Ok(segments)
}

fn end_to_end() -> Outcome {
    let segments = synthetic_sessions(4)?;
    ensure(segments.len() == 28, || {
        format!("{} segments from 4 sessions", segments.len())
    })?;
    let cfg = TrainConfig::default();
    let split = split_dataset(segments, cfg.train_fraction, cfg.seed).map_err(|e| e.to_string())?;
    let initial = ModelWeights::init_for_training(&ModelConfig::default(), 42).map_err(|e| e.to_string())?;
    let outcome = train(initial, &split, &cfg).map_err(|e| e.to_string())?;
    let report = evaluate(&outcome.weights, &split.test, true).map_err(|e| e.to_string())?;

    let train_samples: usize = split.train.iter().map(MergedSegment::len).sum();
    let mean = split.train.iter().flat_map(|s| &s.target).sum::<f64>() / train_samples as f64;
    let test_samples: usize = split.test.iter().map(MergedSegment::len).sum();
    let baseline = split
        .test
        .iter()
        .flat_map(|s| &s.target)
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / test_samples as f64;
    let model_mse = validation_loss(&outcome.weights, &split.test).map_err(|e| e.to_string())?;

    let pooled_pred: Vec<f64> = split
        .test
        .iter()
        .flat_map(|s| forward(&outcome.weights, &s.imu).unwrap().into_data())
        .collect();
    let pooled_true: Vec<f64> = split.test.iter().flat_map(|s| s.target.iter().copied()).collect();
    let pooled_cos = cosine_sim(&pooled_pred, &pooled_true).map_err(|e| e.to_string())?;

    let cos = report.average.cosine;
    let ratio = model_mse / baseline;
    let h = &outcome.history;
    let drop = h.epochs[0].val_loss / h.best_val_loss();
    let detail = format!(
        "{} held-out segments, cosine avg {cos:.4} (worst {:.4}, pooled {pooled_cos:.4}), MSE {model_mse:.3e} = {ratio:.3} x baseline {baseline:.3e}, val loss fell {drop:.1}x from epoch 1 to best epoch {} (stopped {})",
        split.test.len(),
        report.worst.cosine,
        h.best_epoch,
        h.stopped_epoch,
    );
    ensure(cos >= 0.90 && ratio <= 0.1 && drop >= 10.0, || detail.clone())?;
    Ok(detail)
}

fn early_stopping_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..200 {
        let patience = rng.random_range(1..=8);
        let best_epoch = rng.random_range(1..=30);
        let mut losses: Vec<f64> = Vec::new();
        let mut level = 1.0;
        for _ in 0..best_epoch {
            level *= rng.random_range(0.5..0.99);
            losses.push(level);
        }
        for _ in 0..patience + 5 {
            losses.push(level * rng.random_range(1.0..1.5));
        }
        let mut stopper = EarlyStopping::new(patience, 0.0);
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if stopper.observe(i + 1, l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        let stopped = stopped.ok_or_else(|| format!("case {case}: never stopped"))?;
        ensure(
            stopper.best_epoch() == best_epoch && stopped - best_epoch == patience,
            || {
                format!(
                    "case {case}: best {} stopped {stopped} patience {patience}",
                    stopper.best_epoch()
                )
            },
        )?;
    }

    let segments = synthetic_sessions(1)?;
    let split = split_dataset(segments, 0.7, 3).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        blocks: 3,
        residual_channels: 4,
        skip_channels: 4,
        window: 4,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        lr: 0.05,
        crop_len: 256,
        batch: 8,
        patience: 3,
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let initial = ModelWeights::init_for_training(&model, 5).map_err(|e| e.to_string())?;
    let outcome = train(initial, &split, &cfg).map_err(|e| e.to_string())?;
    let h = &outcome.history;
    ensure(h.early_stopped, || {
        format!("training ran all {} epochs", h.stopped_epoch)
    })?;
    ensure(h.stopped_epoch - h.best_epoch == cfg.patience, || {
        format!(
            "stopped {} best {} patience {}",
            h.stopped_epoch, h.best_epoch, cfg.patience
        )
    })?;
    let restored = validation_loss(&outcome.weights, &split.test).map_err(|e| e.to_string())?;
    ensure(restored == h.best_val_loss(), || {
        format!(
            "restored weights give {restored:e}, recorded minimum {:e}",
            h.best_val_loss()
        )
    })?;
    Ok(format!(
        "200 synthetic sequences; training stopped at {} with best {} and restored loss {restored:.6e} exact",
        h.stopped_epoch, h.best_epoch
    ))
}

fn report_fidelity() -> Outcome {
    let segments = synthetic_sessions(1)?;
    let perfect: Vec<Vec<f64>> = segments.iter().map(|s| s.target.clone()).collect();
    let report: MetricsReport = evaluate_predictions(&segments, &perfect, true).map_err(|e| e.to_string())?;
    for (label, agg) in [
        ("best", report.best),
        ("worst", report.worst),
        ("average", report.average),
    ] {
        let values = [agg.mse, agg.mae, agg.cosine, agg.fft_cosine];
        let expected = [0.0, 0.0, 1.0, 1.0];
        ensure(values.iter().zip(expected).all(|(v, e)| (v - e).abs() <= 1e-12), || {
            format!("{label} row {values:?}")
        })?;
    }
    let csv = report.to_csv();
    let mut lines = csv.lines();
    ensure(lines.next() == Some("row,mse,mae,cosine_sim,fft_cosine"), || {
        "CSV header".into()
    })?;
    for label in ["best", "worst", "average"] {
        let line = lines.next().unwrap_or_default();
        ensure(
            line.starts_with(&format!("{label},")) && line.split(',').count() == 5,
            || format!("CSV row `{line}`"),
        )?;
    }
    let table = report.table();
    for needle in METRIC_NAMES.iter().chain(&["Best", "Worst", "Average"]) {
        ensure(table.contains(needle), || format!("table lacks `{needle}`"))?;
    }
    Ok("4 metrics x Best/Worst/Average; perfect prediction gives (0, 0, 1, 1)".into())
}

fn main() {
    let criteria = [
        Criterion {
            name: "gradient oracle",
            budget: Duration::from_secs(10),
            run: gradient_oracle,
        },
        Criterion {
            name: "causality",
            budget: Duration::from_secs(30),
            run: causality,
        },
        Criterion {
            name: "receptive-field tightness",
            budget: Duration::from_secs(60),
            run: receptive_field_tightness,
        },
        Criterion {
            name: "streaming/batch equivalence",
            budget: Duration::from_secs(30),
            run: streaming_equivalence,
        },
        Criterion {
            name: "filter responses",
            budget: Duration::from_secs(5),
            run: filter_responses,
        },
        Criterion {
            name: "FFT oracle",
            budget: Duration::from_secs(30),
            run: fft_oracle,
        },
        Criterion {
            name: "segmentation",
            budget: Duration::from_secs(10),
            run: segmentation,
        },
        Criterion {
            name: "end-to-end synthetic learning",
            budget: Duration::from_secs(600),
            run: end_to_end,
        },
        Criterion {
            name: "early-stopping contract",
            budget: Duration::from_secs(120),
            run: early_stopping_contract,
        },
        Criterion {
            name: "report fidelity",
            budget: Duration::from_secs(10),
            run: report_fidelity,
        },
    ];
    // Optional substring filter, e.g. `cargo test --test acceptance -- FFT`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str())))
    {
        let started = Instant::now();
        let result = (c.run)();
        let elapsed = started.elapsed();
        let (status, detail) = match result {
            Ok(d) if elapsed <= c.budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over budget {:?}", c.budget)),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("{status} {}: {detail} [{:.2}s]", c.name, elapsed.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
