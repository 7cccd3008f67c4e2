use emg_forge::dataio::{build_segments, emg_envelope, Motion, PipelineConfig};
use emg_forge::metrics::cosine_sim;
use emg_forge::synthgen::{generate_recording, truth_from_gyro, MotionProfile, NoiseConfig};

fn silent(motion: Motion) -> MotionProfile {
    MotionProfile {
        noise: NoiseConfig::SILENT,
        mains: 0.0,
        ..MotionProfile::for_motion(motion)
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let p = MotionProfile::default();
    let a = generate_recording(&p, 9, "s", 1).unwrap();
    let b = generate_recording(&p, 9, "s", 1).unwrap();
    assert_eq!(a, b);
    let c = generate_recording(&p, 10, "s", 1).unwrap();
    assert_ne!(a.recording.emg, c.recording.emg);
}

#[test]
fn noiseless_pipeline_tracks_truth() {
    let pipeline = PipelineConfig::default();
    for motion in Motion::ALL {
        for seed in 0..6 {
            let rec = generate_recording(&silent(motion), seed, "s", 1).unwrap();
            let env = emg_envelope(&rec.recording, &pipeline).unwrap();
            let cos = cosine_sim(&env.samples, &rec.truth).unwrap();
            assert!(cos >= 0.98, "{motion} seed {seed}: cosine {cos}");
        }
    }
}

#[test]
fn one_segment_per_repetition() {
    let pipeline = PipelineConfig::default();
    for motion in Motion::ALL {
        for seed in 0..8 {
            let mut p = MotionProfile::for_motion(motion);
            p.noise = NoiseConfig {
                accel: 0.5,
                gyro: 5.0,
                emg: 0.03,
            };
            let rec = generate_recording(&p, seed, "s", 1).unwrap();
            let segs = build_segments(&rec.recording, &pipeline).unwrap();
            assert_eq!(segs.len(), 7, "{motion} seed {seed}");
            let mut onsets = rec.rep_onsets.clone();
            onsets.push(rec.recording.len());
            for (i, s) in segs.iter().enumerate() {
                assert!(
                    (onsets[i]..onsets[i + 1]).contains(&s.bounds.peak),
                    "{motion} seed {seed}: peak {} outside repetition {i}",
                    s.bounds.peak
                );
            }
        }
    }
}

#[test]
fn rep_count_follows_profile() {
    for reps in [1, 3, 7] {
        let p = MotionProfile {
            n_reps: reps,
            ..MotionProfile::default()
        };
        let mut pipeline = PipelineConfig::default();
        pipeline.segmentation.top_k = reps;
        let rec = generate_recording(&p, 2, "s", 1).unwrap();
        assert_eq!(build_segments(&rec.recording, &pipeline).unwrap().len(), reps);
    }
}

#[test]
fn truth_is_a_causal_function_of_gyro() {
    let p = MotionProfile::default();
    let rec = generate_recording(&p, 4, "s", 1).unwrap();
    let gyro_y = &rec.recording.imu[4].samples;
    assert_eq!(truth_from_gyro(gyro_y, p.gain(), p.lag, p.smooth), rec.truth);

    let t0 = 12_000;
    let mut altered = gyro_y.clone();
    altered[t0..].iter_mut().for_each(|v| *v *= -3.0);
    let again = truth_from_gyro(&altered, p.gain(), p.lag, p.smooth);
    assert_eq!(again[..t0 + p.lag], rec.truth[..t0 + p.lag]);
}
