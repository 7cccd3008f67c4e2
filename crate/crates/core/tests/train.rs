use emg_forge::dataio::{build_segments, split_dataset, DatasetSplit, PipelineConfig};
use emg_forge::model::{ModelConfig, ModelWeights};
use emg_forge::synthgen::{generate_recording, MotionProfile};
use emg_forge::train::{evaluate, train, validation_loss, EarlyStopping, StopDecision, TrainConfig};
use emg_forge::Error;

fn small_model() -> ModelConfig {
    ModelConfig {
        blocks: 3,
        residual_channels: 4,
        skip_channels: 4,
        window: 4,
        ..ModelConfig::default()
    }
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        crop_len: 256,
        batch: 8,
        max_epochs: 4,
        ..TrainConfig::default()
    }
}

fn one_session_split() -> DatasetSplit {
    let rec = generate_recording(&MotionProfile::default(), 31, "s", 1)
        .unwrap()
        .recording;
    let segs = build_segments(&rec, &PipelineConfig::default()).unwrap();
    split_dataset(segs, 0.7, 5).unwrap()
}

#[test]
fn patience_counts_epochs_without_improvement() {
    let mut stopper = EarlyStopping::new(5, 0.0);
    let losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];
    let decisions: Vec<StopDecision> = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| stopper.observe(i + 1, l))
        .collect();
    assert_eq!(decisions[6], StopDecision::Stop);
    assert!(decisions[..6].iter().all(|d| *d != StopDecision::Stop));
    assert_eq!(stopper.best_epoch(), 2);

    let mut stopper = EarlyStopping::new(2, 0.0);
    for epoch in 1..=100 {
        assert_eq!(stopper.observe(epoch, 1.0 / epoch as f64), StopDecision::Improved);
    }
}

#[test]
fn same_seed_gives_identical_history_and_weights() {
    let split = one_session_split();
    let run = || {
        train(
            ModelWeights::init_for_training(&small_model(), 3).unwrap(),
            &split,
            &quick_config(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.to_csv(false), b.history.to_csv(false));
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history.epochs.len(), 4);
    assert!(!a.history.early_stopped);
    assert_eq!(a.history.stopped_epoch, 4);
}

#[test]
fn training_improves_on_initial_weights() {
    let split = one_session_split();
    let initial = ModelWeights::init_for_training(&small_model(), 3).unwrap();
    let outcome = train(initial, &split, &quick_config()).unwrap();
    let h = &outcome.history;
    let restored = validation_loss(&outcome.weights, &split.test).unwrap();
    assert_eq!(restored, h.best_val_loss());
    assert!(h.epochs.iter().all(|e| e.val_loss >= h.best_val_loss()));
    assert!(h.best_val_loss() < h.epochs[0].val_loss || h.best_epoch == 1);

    let report = evaluate(&outcome.weights, &split.test, true).unwrap();
    assert_eq!(report.rows.len(), split.test.len());
    assert!(report.average.mse.is_finite());
}

#[test]
fn non_finite_data_reports_divergence() {
    let mut split = one_session_split();
    for s in &mut split.train {
        s.target.iter_mut().for_each(|v| *v = f64::NAN);
    }
    let initial = ModelWeights::init_for_training(&small_model(), 3).unwrap();
    let err = train(initial, &split, &quick_config()).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
}

#[test]
fn history_csv_layout() {
    let split = one_session_split();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..quick_config()
    };
    let outcome = train(
        ModelWeights::init_for_training(&small_model(), 1).unwrap(),
        &split,
        &cfg,
    )
    .unwrap();
    let csv = outcome.history.to_csv(true);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert!(outcome.history.to_csv(false).lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn rejects_invalid_settings() {
    let split = one_session_split();
    let initial = ModelWeights::init_for_training(&small_model(), 1).unwrap();
    for cfg in [
        TrainConfig {
            patience: 0,
            ..quick_config()
        },
        TrainConfig {
            batch: 0,
            ..quick_config()
        },
        TrainConfig {
            crop_len: 8,
            ..quick_config()
        },
    ] {
        assert!(train(initial.clone(), &split, &cfg).is_err());
    }
}
