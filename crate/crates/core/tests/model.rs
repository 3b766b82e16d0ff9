mod common;

use common::{random_batch, random_model, small_config, uniform_tensor};
use tabmoe::data::{Targets, Task};
use tabmoe::model::{
    count_params, decode_checkpoint, encode_checkpoint, layout, Architecture, Family, GateNoise, InputSpec, Model,
    ModelConfig, ModelParams, Mode,
};
use tabmoe::numerics::{fd_check, ProbVec, Rng, Tensor};
use tabmoe::preprocess::Encoded;

fn regression(arch: Architecture, n_numeric: usize) -> ModelConfig {
    ModelConfig::new(arch, Task::Regression, InputSpec { n_numeric, n_other: 0 }).unwrap()
}

fn batch(rows: usize, cols: usize, seed: u64) -> Encoded {
    let mut rng = Rng::new(seed);
    Encoded::from_numeric(
        uniform_tensor(&[rows, cols], -2.0, 2.0, &mut rng),
        Targets::Real(vec![0.0; rows]),
    )
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b)
}

#[test]
fn init_shapes_for_small_mlp() {
    let config = regression(Architecture::mlp(1, 8, 0.0), 4);
    let params = ModelParams::init(&config, &mut Rng::new(0)).unwrap();
    let shapes: Vec<&[usize]> = params.tensors.iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, vec![&[4, 8][..], &[8], &[8, 1], &[1]]);
    let bound = 0.5;
    assert!(params.tensors[0].data().iter().all(|v| v.abs() <= bound));
    assert!(params.tensors[1].data().iter().all(|&v| v == 0.0));
}

#[test]
fn moe_expert_count() {
    let config = regression(Architecture::moe(1, 128, 64, 0.0), 4);
    assert_eq!(config.num_experts(), 2);
}

#[test]
fn init_is_deterministic() {
    let config = regression(Architecture::ggmoe(2, 256, 32, 0.1, 1.0), 5);
    let a = ModelParams::init(&config, &mut Rng::new(9)).unwrap();
    let b = ModelParams::init(&config, &mut Rng::new(9)).unwrap();
    let c = ModelParams::init(&config, &mut Rng::new(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn dropout_zero_train_equals_eval() {
    let config = regression(Architecture::mlp(3, 16, 0.0), 3);
    let model = Model::init(config, &mut Rng::new(1)).unwrap();
    let x = batch(10, 3, 2);
    let train = model.forward(&x, Mode::Train, &mut Rng::new(3)).unwrap();
    let eval = model.forward(&x, Mode::Eval, &mut Rng::new(4)).unwrap();
    assert_eq!(train.output, eval.output);
}

#[test]
fn dropout_changes_train_output_only() {
    let config = regression(Architecture::mlp(2, 32, 0.4), 3);
    let model = Model::init(config, &mut Rng::new(1)).unwrap();
    let x = batch(10, 3, 2);
    let e1 = model.forward(&x, Mode::Eval, &mut Rng::new(3)).unwrap();
    let e2 = model.forward(&x, Mode::Eval, &mut Rng::new(4)).unwrap();
    let t = model.forward(&x, Mode::Train, &mut Rng::new(3)).unwrap();
    assert_eq!(e1.output, e2.output);
    assert!(max_diff(&e1.output, &t.output) > 0.0);
}

#[test]
fn zero_weights_predict_zero() {
    let config = regression(Architecture::mlp(2, 8, 0.0), 4);
    let model = Model::new(config.clone(), ModelParams::zeros(&config)).unwrap();
    let out = model.forward(&batch(7, 4, 5), Mode::Eval, &mut Rng::new(0)).unwrap();
    assert!(out.output.data().iter().all(|&v| v == 0.0));
}

#[test]
fn hand_built_network() {
    let config = regression(Architecture::mlp(1, 1, 0.0), 2);
    let params = ModelParams {
        tensors: vec![
            Tensor::matrix(2, 1, vec![1.0, 2.0]),
            Tensor::vector(vec![0.5]),
            Tensor::matrix(1, 1, vec![2.0]),
            Tensor::vector(vec![0.0]),
        ],
    };
    let model = Model::new(config, params).unwrap();
    let x = Encoded::from_numeric(Tensor::matrix(1, 2, vec![1.0, 0.0]), Targets::Real(vec![0.0]));
    let out = model.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert_eq!(out.output.data(), &[3.0]);
}

#[test]
fn width_mismatch_is_a_dimension_error() {
    let config = regression(Architecture::mlp(1, 4, 0.0), 3);
    let model = Model::init(config, &mut Rng::new(0)).unwrap();
    let err = model.forward(&batch(2, 4, 0), Mode::Eval, &mut Rng::new(0)).unwrap_err();
    assert!(matches!(err, tabmoe::Error::Dimension { .. }));
}

/// MLP parameters placed into a single-expert MoE, gate weights arbitrary.
fn single_expert_pair(task: Task, seed: u64) -> (Model, Model) {
    let input = InputSpec { n_numeric: 4, n_other: 0 };
    let mlp = ModelConfig::new(Architecture::mlp(2, 16, 0.0), task, input).unwrap();
    let moe = ModelConfig::new(Architecture::moe(2, 16, 16, 0.0), task, input).unwrap();
    let mut rng = Rng::new(seed);
    let m = Model::init(mlp, &mut rng).unwrap();
    let mut tensors = m.params().tensors.clone();
    tensors.push(uniform_tensor(&[1, 5], -1.0, 1.0, &mut rng));
    let e = Model::new(moe, ModelParams { tensors }).unwrap();
    (m, e)
}

#[test]
fn single_expert_mixture_equals_mlp() {
    for task in [Task::Regression, Task::Multiclass { n_classes: 3 }] {
        let (mlp, moe) = single_expert_pair(task, 11);
        let x = batch(50, 4, 12);
        let a = mlp.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
        let b = moe.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
        assert!(max_diff(&a.output, &b.output) <= 1e-12);
        assert!(b.gate_entropy.unwrap().iter().all(|&h| h == 0.0));
    }
}

#[test]
fn zero_gate_gives_expert_mean() {
    let config = regression(Architecture::moe(1, 96, 32, 0.0), 3);
    let mut rng = Rng::new(4);
    let model = Model::init(config, &mut rng).unwrap();
    let mut params = model.params().clone();
    let g = params.tensors.len() - 1;
    params.tensors[g] = Tensor::zeros(params.tensors[g].shape());
    let model = Model::new(model.config().clone(), params.clone()).unwrap();
    let x = batch(20, 3, 5);
    let out = model.forward(&x, Mode::Eval, &mut rng).unwrap();
    let gate = out.gate.unwrap();
    assert!(gate.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    // oracle: run each expert as a standalone MLP and average
    let mlp_config = regression(Architecture::mlp(1, 32, 0.0), 3);
    let mut mean = vec![0.0; 20];
    for k in 0..3 {
        let expert = Model::new(mlp_config.clone(), ModelParams { tensors: params.tensors[4 * k..4 * k + 4].to_vec() }).unwrap();
        let y = expert.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
        for (m, v) in mean.iter_mut().zip(y.output.data()) {
            *m += v / 3.0;
        }
    }
    for (a, b) in out.output.data().iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn two_expert_weighted_mean() {
    // experts are constant (zero block weights) with head biases 1 and 3;
    // gate bias column gives logits ln(1), ln(3) → gate [0.25, 0.75]
    let config = regression(Architecture::moe(1, 2, 1, 0.0), 1);
    let mut params = ModelParams::zeros(&config);
    params.tensors[3] = Tensor::vector(vec![1.0]);
    params.tensors[7] = Tensor::vector(vec![3.0]);
    params.tensors[8] = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 3f64.ln()]);
    let model = Model::new(config, params).unwrap();
    let out = model.forward(&batch(4, 1, 0), Mode::Eval, &mut Rng::new(0)).unwrap();
    for r in 0..4 {
        let g = out.gate.as_ref().unwrap().row(r);
        assert!((g[0] - 0.25).abs() < 1e-15 && (g[1] - 0.75).abs() < 1e-15);
        assert!((out.output.data()[r] - 2.5).abs() < 1e-14);
    }
}

#[test]
fn gate_logit_shift_invariance() {
    let config = ModelConfig::new(
        Architecture::moe(2, 128, 32, 0.0),
        Task::Multiclass { n_classes: 4 },
        InputSpec { n_numeric: 5, n_other: 0 },
    )
    .unwrap();
    let model = Model::init(config, &mut Rng::new(8)).unwrap();
    let mut shifted = model.params().clone();
    let g = shifted.tensors.len() - 1;
    let cols = shifted.tensors[g].cols();
    for row in shifted.tensors[g].data_mut().chunks_mut(cols) {
        row[cols - 1] += 7.25;
    }
    let other = Model::new(model.config().clone(), shifted).unwrap();
    let x = batch(30, 5, 9);
    let a = model.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    let b = other.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert!(max_diff(&a.output, &b.output) < 1e-12);
}

fn ggmoe_and_moe(tau: f64, seed: u64) -> (Model, Model) {
    let input = InputSpec { n_numeric: 4, n_other: 0 };
    let gg = ModelConfig::new(Architecture::ggmoe(1, 128, 32, 0.0, tau), Task::Regression, input).unwrap();
    let moe = ModelConfig::new(Architecture::moe(1, 128, 32, 0.0), Task::Regression, input).unwrap();
    let g = Model::init(gg, &mut Rng::new(seed)).unwrap();
    let m = Model::new(moe, g.params().clone()).unwrap();
    (g, m)
}

#[test]
fn zero_noise_unit_tau_equals_softmax_gate() {
    let (gg, moe) = ggmoe_and_moe(1.0, 3);
    let x = batch(25, 4, 4);
    let a = gg.forward_with_noise(&x, Mode::Train, GateNoise::Zero, &mut Rng::new(0)).unwrap();
    let b = moe.forward(&x, Mode::Train, &mut Rng::new(0)).unwrap();
    assert!(max_diff(&a.output, &b.output) < 1e-15);
}

#[test]
fn huge_tau_flattens_the_gate() {
    let (gg, _) = ggmoe_and_moe(1e6, 3);
    let out = gg.forward(&batch(25, 4, 4), Mode::Train, &mut Rng::new(1)).unwrap();
    assert!(out.gate.unwrap().data().iter().all(|&g| (g - 0.25).abs() < 1e-3));
}

#[test]
fn gumbel_gate_reproducible_and_random() {
    let (gg, _) = ggmoe_and_moe(1.0, 3);
    let x = batch(25, 4, 4);
    let a = gg.forward(&x, Mode::Train, &mut Rng::new(5)).unwrap();
    let b = gg.forward(&x, Mode::Train, &mut Rng::new(5)).unwrap();
    let c = gg.forward(&x, Mode::Train, &mut Rng::new(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.output, c.output);
}

#[test]
fn mc_single_expert_ignores_sample_count() {
    let input = InputSpec { n_numeric: 3, n_other: 0 };
    let config = ModelConfig::new(Architecture::ggmoe(1, 32, 32, 0.0, 1.0), Task::Regression, input).unwrap();
    let model = Model::init(config, &mut Rng::new(1)).unwrap();
    let x = batch(12, 3, 2);
    let one = model.predict_mc(&x, 1, &mut Rng::new(3)).unwrap();
    let many = model.predict_mc(&x, 37, &mut Rng::new(4)).unwrap();
    assert!(max_diff(&one.output, &many.output) < 1e-12);
    let mlp = Model::new(regression(Architecture::mlp(1, 32, 0.0), 3), ModelParams {
        tensors: model.params().tensors[..4].to_vec(),
    })
    .unwrap();
    let plain = mlp.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert!(max_diff(&one.output, &plain.output) < 1e-12);
}

#[test]
fn mc_prediction_is_mean_of_single_draws() {
    for task in [Task::Regression, Task::Multiclass { n_classes: 3 }] {
        let config = ModelConfig::new(
            Architecture::ggmoe(2, 160, 32, 0.2, 0.7),
            task,
            InputSpec { n_numeric: 4, n_other: 2 },
        )
        .unwrap();
        let model = Model::init(config.clone(), &mut Rng::new(21)).unwrap();
        let x = random_batch(&config, 15, &mut Rng::new(22));
        let n = 9;
        let mc = model.predict_mc(&x, n, &mut Rng::new(23)).unwrap();
        let mut rng = Rng::new(23);
        let mut sum = Tensor::zeros(mc.output.shape());
        for _ in 0..n {
            let single = model.forward(&x, Mode::Eval, &mut rng).unwrap();
            for (s, v) in sum.data_mut().iter_mut().zip(single.output.data()) {
                *s += v;
            }
        }
        let mean = sum.map(|v| v / n as f64);
        assert_eq!(mc.output, mean);
    }
}

#[test]
fn mc_averaging_reduces_variance() {
    let (gg, _) = ggmoe_and_moe(1.0, 31);
    let x = batch(1, 4, 32);
    let variance = |n: usize| {
        let draws: Vec<f64> = (0..200)
            .map(|rep| gg.predict_mc(&x, n, &mut Rng::new(1000 + rep)).unwrap().output.data()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / 200.0;
        draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 200.0
    };
    let (v1, v100) = (variance(1), variance(100));
    assert!(v1 > 0.0);
    assert!(v100 < v1, "v100 = {v100}, v1 = {v1}");
}

#[test]
fn chunked_prediction_matches_direct_for_small_splits() {
    let (gg, _) = ggmoe_and_moe(1.3, 5);
    let x = batch(40, 4, 6);
    let rng = Rng::new(7);
    let a = gg.predict(&x, 5, &rng).unwrap();
    let b = gg.predict_mc(&x, 5, &mut rng.fork(0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn embedded_width_and_zero_weights() {
    let config = ModelConfig::new(
        Architecture::mlp(1, 8, 0.0).with_embedding(8, 4),
        Task::Regression,
        InputSpec { n_numeric: 2, n_other: 3 },
    )
    .unwrap();
    assert_eq!(config.input_width(), 19);
    let model = Model::new(config.clone(), ModelParams::zeros(&config)).unwrap();
    let x = random_batch(&config, 6, &mut Rng::new(1));
    let h = model.embed(&x).unwrap();
    assert_eq!(h.shape(), &[6, 19]);
    for r in 0..6 {
        assert!(h.row(r)[..16].iter().all(|&v| v == 0.0));
        assert_eq!(&h.row(r)[16..], x.other.row(r));
    }
}

#[test]
fn identity_embedding_reproduces_encoding() {
    let config = ModelConfig::new(
        Architecture::mlp(1, 4, 0.0).with_embedding(3, 3),
        Task::Regression,
        InputSpec { n_numeric: 2, n_other: 0 },
    )
    .unwrap();
    let mut params = ModelParams::zeros(&config);
    params.tensors[0] = Tensor::identity(3);
    params.tensors[2] = Tensor::identity(3);
    let model = Model::new(config.clone(), params).unwrap();
    let x = random_batch(&config, 5, &mut Rng::new(2));
    let h = model.embed(&x).unwrap();
    assert_eq!(h, *x.ple.as_ref().unwrap());
}

#[test]
fn embed_without_embedding_is_an_error() {
    let config = regression(Architecture::mlp(1, 4, 0.0), 2);
    let model = Model::init(config, &mut Rng::new(0)).unwrap();
    assert!(model.embed(&batch(2, 2, 0)).is_err());
}

#[test]
fn count_matches_materialized_params() {
    let mut rng = Rng::new(77);
    for i in 0..50 {
        let family = Family::ALL[i % 3];
        let config = small_config(family, rng.bernoulli(0.5), &mut rng);
        let params = ModelParams::init(&config, &mut rng).unwrap();
        assert_eq!(count_params(&config), params.n_scalars(), "{config:?}");
        assert_eq!(layout(&config).len(), params.tensors.len());
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = Rng::new(5);
    for family in Family::ALL {
        let config = small_config(family, true, &mut rng);
        let params = ModelParams::init(&config, &mut rng).unwrap();
        let bytes = encode_checkpoint(&config, &params, 42).unwrap();
        let (header, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.config, config);
        assert_eq!(header.seed, 42);
        assert_eq!(header.n_params, count_params(&config));
        assert_eq!(header.input_width, config.input_width());
        assert_eq!(back, params);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }
}

fn gradient_error(model: &Model, batch: &Encoded, seed: u64) -> f64 {
    let apply = |tape: &mut tabmoe::numerics::Tape, vars: &[tabmoe::numerics::Var]| {
        let mut rng = Rng::new(seed);
        let rec = model.record(tape, vars, batch, Mode::Train, GateNoise::Sample, &mut rng)?;
        model.record_loss(tape, rec.output, &batch.targets)
    };
    fd_check(apply, &model.params().tensors, 1e-5).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(2024);
    for family in Family::ALL {
        for embedding in [false, true] {
            for rep in 0..4 {
                let (model, batch) = random_model(family, embedding, &mut rng);
                let err = gradient_error(&model, &batch, rep);
                assert!(err < 1e-4, "{family} embedding={embedding}: {err}");
            }
        }
    }
}

#[test]
fn two_block_mlp_gradient() {
    let config = ModelConfig::new(
        Architecture::mlp(2, 6, 0.0),
        Task::Regression,
        InputSpec { n_numeric: 3, n_other: 1 },
    )
    .unwrap();
    let model = Model::init(config.clone(), &mut Rng::new(3)).unwrap();
    let x = random_batch(&config, 8, &mut Rng::new(4));
    assert!(gradient_error(&model, &x, 0) < 1e-4);
}

#[test]
fn classification_outputs_are_distributions() {
    let mut rng = Rng::new(404);
    for family in Family::ALL {
        let config = ModelConfig::new(
            match family {
                Family::Mlp => Architecture::mlp(2, 16, 0.0),
                Family::Moe => Architecture::moe(2, 96, 32, 0.0),
                Family::Ggmoe => Architecture::ggmoe(2, 96, 32, 0.0, 0.5),
            },
            Task::Multiclass { n_classes: 5 },
            InputSpec { n_numeric: 3, n_other: 0 },
        )
        .unwrap();
        let model = Model::init(config, &mut rng).unwrap();
        // wide inputs push logits far from zero
        let x = Encoded::from_numeric(
            uniform_tensor(&[10_000, 3], -50.0, 50.0, &mut rng),
            Targets::Class(vec![0; 10_000]),
        );
        let out = model.predict(&x, 3, &rng).unwrap();
        for r in 0..x.n_rows() {
            ProbVec::new(out.output.row(r).to_vec()).unwrap();
        }
        if let (Some(gate), Some(h)) = (out.gate, out.gate_entropy) {
            let k = gate.cols() as f64;
            for r in 0..gate.rows() {
                ProbVec::new(gate.row(r).to_vec()).unwrap();
                assert!(h[r] >= 0.0 && h[r] <= k.ln());
            }
        }
    }
}
