use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emg_forge::model::{
    forward, forward_on_tape, forward_streaming, load_weights_expecting, receptive_field, save_weights, Activation,
    ModelConfig, ModelWeights, StreamState, TapeParams, IMU_CHANNELS,
};
use emg_forge::tensor::{Tape, Tensor};

fn random_input(t: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..IMU_CHANNELS * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(IMU_CHANNELS, t, data).unwrap()
}

fn config(k: usize, n: usize, w: usize, act: Activation) -> ModelConfig {
    ModelConfig {
        kernel_size: k,
        blocks: n,
        residual_channels: 3,
        skip_channels: 2,
        window: w,
        activation: act,
    }
}

fn constant_weights(cfg: &ModelConfig, value: f64) -> ModelWeights {
    let mut w = ModelWeights::zeros(cfg).unwrap();
    for (_, k) in w.kernels_mut() {
        k.weight.data_mut().fill(value);
    }
    w
}

#[test]
fn receptive_field_examples() {
    let rf = |k, n, w| receptive_field(&config(k, n, w, Activation::Gated));
    assert_eq!((rf(2, 1, 1).blocks, rf(2, 1, 1).total), (2, 2));
    assert_eq!(rf(3, 6, 1).blocks, 127);
    assert_eq!(rf(3, 6, 16).total, 142);
    assert_eq!(receptive_field(&ModelConfig::default()).total, 142);
}

#[test]
fn perturbation_sweep_finds_exact_reach() {
    for (k, n, w) in [(2, 1, 1), (2, 3, 4), (3, 2, 1), (3, 4, 8), (3, 6, 16)] {
        for act in [Activation::Gated, Activation::Relu] {
            let cfg = config(k, n, w, act);
            let r = receptive_field(&cfg).total;
            let weights = constant_weights(&cfg, 0.1);
            let t_len = r + 10;
            let target = t_len - 1;
            let x = Tensor::filled(IMU_CHANNELS, t_len, 0.5);
            let base = forward(&weights, &x).unwrap().data()[target];
            for dist in 0..r + 5 {
                let mut xp = x.clone();
                xp.set(2, target - dist, 1.5);
                let y = forward(&weights, &xp).unwrap().data()[target];
                assert_eq!(y != base, dist < r, "{cfg:?}: distance {dist}, R_total {r}");
            }
        }
    }
}

#[test]
fn input_gradient_vanishes_for_earlier_outputs() {
    let cfg = config(3, 3, 5, Activation::Gated);
    let weights = ModelWeights::init(&cfg, 8).unwrap();
    let t_len = 60;
    for out_t in [0, 17, 59] {
        let mut tape = Tape::new();
        let params = TapeParams::register(&mut tape, &weights);
        let xv = tape.param(random_input(t_len, 3));
        let y = forward_on_tape(&weights, &params, &mut tape, xv).unwrap();
        let mut pick = Tensor::zeros(1, t_len);
        pick.set(0, out_t, 1.0);
        let pv = tape.constant(pick);
        let prod = tape.mul(y, pv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(xv).unwrap();
        for c in 0..IMU_CHANNELS {
            assert!(g.row(c)[out_t + 1..].iter().all(|&v| v == 0.0));
        }
        assert!((0..IMU_CHANNELS).any(|c| g.get(c, out_t) != 0.0));
    }
}

#[test]
fn streaming_after_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = ModelConfig {
        residual_channels: 8,
        skip_channels: 8,
        ..ModelConfig::default()
    };
    let mut weights = ModelWeights::init(&cfg, 21).unwrap();
    weights.scaler.scale = vec![0.1, 0.1, 0.1, 0.01, 0.01, 0.01];
    save_weights(&weights, &path).unwrap();
    let loaded = load_weights_expecting(&path, &cfg).unwrap();
    let x = random_input(700, 4);
    let batch = forward(&weights, &x).unwrap();
    let mut state = StreamState::new(&cfg).unwrap();
    for t in 0..x.len() {
        let frame: Vec<f64> = (0..IMU_CHANNELS).map(|c| x.get(c, t)).collect();
        let y = forward_streaming(&loaded, &mut state, &frame).unwrap();
        assert!((y - batch.data()[t]).abs() <= 1e-9);
    }
    assert_eq!(state.steps(), 700);
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (2usize..5, 1usize..5, 1usize..5, 1usize..5, 1usize..10, any::<bool>()).prop_map(|(k, n, r, s, w, gated)| {
        ModelConfig {
            kernel_size: k,
            blocks: n,
            residual_channels: r,
            skip_channels: s,
            window: w,
            activation: if gated { Activation::Gated } else { Activation::Relu },
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streaming_matches_batch(cfg in arb_config(), seed in any::<u64>(), t_len in 1usize..200) {
        let weights = ModelWeights::init(&cfg, seed).unwrap();
        let x = random_input(t_len, seed ^ 1);
        let batch = forward(&weights, &x).unwrap();
        let mut state = StreamState::new(&cfg).unwrap();
        for t in 0..t_len {
            let frame: Vec<f64> = (0..IMU_CHANNELS).map(|c| x.get(c, t)).collect();
            let y = forward_streaming(&weights, &mut state, &frame).unwrap();
            prop_assert!((y - batch.data()[t]).abs() <= 1e-9);
        }
    }

    #[test]
    fn future_perturbation_leaves_past(cfg in arb_config(), seed in any::<u64>(), t_len in 2usize..150, frac in 0.0f64..1.0) {
        let weights = ModelWeights::init(&cfg, seed).unwrap();
        let x = random_input(t_len, seed ^ 2);
        let cut = 1 + ((t_len - 1) as f64 * frac) as usize;
        let mut xp = x.clone();
        for c in 0..IMU_CHANNELS {
            for t in cut..t_len {
                xp.set(c, t, -x.get(c, t) + 3.0);
            }
        }
        let (a, b) = (forward(&weights, &x).unwrap(), forward(&weights, &xp).unwrap());
        prop_assert_eq!(&a.data()[..cut], &b.data()[..cut]);
    }

    #[test]
    fn tape_forward_equals_batch_forward(cfg in arb_config(), seed in any::<u64>(), t_len in 1usize..100) {
        let weights = ModelWeights::init(&cfg, seed).unwrap();
        let x = random_input(t_len, seed ^ 3);
        let mut tape = Tape::new();
        let params = TapeParams::register(&mut tape, &weights);
        let xv = tape.constant(x.clone());
        let y = forward_on_tape(&weights, &params, &mut tape, xv).unwrap();
        prop_assert_eq!(tape.value(y), &forward(&weights, &x).unwrap());
    }
}
