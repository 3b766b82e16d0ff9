mod common;

use tabmoe::data::{synth, SynthKind, SynthSpec};
use tabmoe::model::{layout, Architecture, Decay, InputSpec, Model, ModelConfig};
use tabmoe::numerics::{Rng, Tensor};
use tabmoe::preprocess::{Encoded, EncodedBundle};
use tabmoe::train::{adamw_step, clip_global, fit, global_norm, score_split, OptimizerState, StopReason, TrainConfig};

fn linear_bundle(n: usize, seed: u64) -> EncodedBundle {
    let spec = SynthSpec {
        kind: SynthKind::Linear,
        n,
        n_features: 4,
        noise: 0.1,
        seed,
    };
    EncodedBundle::new(&synth(&spec).unwrap(), None).unwrap()
}

fn small_mlp(data: &EncodedBundle, seed: u64) -> Model {
    let config = ModelConfig::new(
        Architecture::mlp(2, 32, 0.0),
        data.preprocessor.task,
        InputSpec::of(&data.preprocessor),
    )
    .unwrap();
    Model::init(config, &mut Rng::new(seed)).unwrap()
}

fn cfg(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: 64,
        ..TrainConfig::new(3e-3, 0.0, 5)
    }
}

#[test]
fn linear_task_reaches_noise_floor() {
    let data = linear_bundle(2000, 1);
    let out = fit(small_mlp(&data, 2), &data.train, &data.val, data.preprocessor.target, &cfg(200)).unwrap();
    let rmse = -out.report.best_val_score;
    assert!(rmse <= 0.12, "validation RMSE {rmse}");
    assert!(out.report.epochs_run <= 200);
}

#[test]
fn training_is_reproducible() {
    let data = linear_bundle(300, 3);
    let a = fit(small_mlp(&data, 4), &data.train, &data.val, data.preprocessor.target, &cfg(15)).unwrap();
    let b = fit(small_mlp(&data, 4), &data.train, &data.val, data.preprocessor.target, &cfg(15)).unwrap();
    assert_eq!(a.report.train_loss, b.report.train_loss);
    assert_eq!(a.report.val_score, b.report.val_score);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn single_epoch_cap() {
    let data = linear_bundle(300, 3);
    let out = fit(small_mlp(&data, 4), &data.train, &data.val, data.preprocessor.target, &cfg(1)).unwrap();
    assert_eq!(out.report.epochs_run, 1);
    assert_eq!(out.report.stop_reason, StopReason::MaxEpochs);
    assert_eq!(out.report.best_epoch, 1);
}

#[test]
fn returns_best_epoch_params() {
    let data = linear_bundle(300, 7);
    // a large learning rate makes the validation trace noisy
    let config = TrainConfig {
        patience: 4,
        ..TrainConfig { learning_rate: 0.05, ..cfg(40) }
    };
    let out = fit(small_mlp(&data, 8), &data.train, &data.val, data.preprocessor.target, &config).unwrap();
    let r = &out.report;
    let max = r.val_score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.best_val_score, max);
    assert_eq!(r.val_score[r.best_epoch - 1], max);
    assert!(r.best_epoch <= r.epochs_run);
    let rescored = score_split(
        &out.model,
        &data.val,
        data.preprocessor.target,
        config.mc_samples,
        &Rng::new(config.seed).fork(0x7a1).fork(r.best_epoch as u64),
    )
    .unwrap();
    assert_eq!(rescored, max);
}

#[test]
fn divergence_without_any_epoch_is_a_numeric_error() {
    let data = linear_bundle(300, 9);
    let mut poisoned: Encoded = data.train.clone();
    poisoned.numeric.data_mut()[0] = f64::NAN;
    let err = fit(small_mlp(&data, 1), &poisoned, &data.val, data.preprocessor.target, &cfg(3)).unwrap_err();
    assert!(matches!(err, tabmoe::Error::Numeric(_)));
}

#[test]
fn clipped_norm_is_bounded() {
    let mut rng = Rng::new(12);
    for _ in 0..500 {
        let scale = 10f64.powf(rng.uniform_range(-3.0, 3.0));
        let mut grads: Vec<Tensor> = (0..1 + rng.below(4))
            .map(|_| common::uniform_tensor(&[1 + rng.below(5), 1 + rng.below(5)], -scale, scale, &mut rng))
            .collect();
        let clip = rng.uniform_range(0.1, 2.0);
        clip_global(&mut grads, clip).unwrap();
        assert!(global_norm(&grads) <= clip + 1e-12);
    }
}

#[test]
fn first_adam_step_moves_at_most_lr() {
    let mut rng = Rng::new(13);
    let config = ModelConfig::new(
        Architecture::moe(1, 64, 32, 0.0),
        tabmoe::data::Task::Regression,
        InputSpec { n_numeric: 3, n_other: 0 },
    )
    .unwrap();
    let model = Model::init(config.clone(), &mut rng).unwrap();
    let before = model.params().tensors.clone();
    let mut after = before.clone();
    let grads: Vec<Tensor> = before
        .iter()
        .map(|t| common::uniform_tensor(t.shape(), -100.0, 100.0, &mut rng))
        .collect();
    let decay: Vec<Decay> = layout(&config).into_iter().map(|s| s.decay).collect();
    let mut state = OptimizerState::new(&before);
    let lr = 1e-3;
    adamw_step(&mut after, &grads, &decay, &mut state, lr, 0.0).unwrap();
    for (a, b) in after.iter().zip(&before) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= lr * (1.0 + 1e-6));
        }
    }
}
