#![allow(dead_code)]

use tabmoe::data::{Targets, Task};
use tabmoe::model::{Architecture, Family, InputSpec, Model, ModelConfig};
use tabmoe::numerics::{Rng, Tensor};
use tabmoe::preprocess::Encoded;

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect())
}

/// Small random configuration of `family`, sized for finite differences.
pub fn small_config(family: Family, embedding: bool, rng: &mut Rng) -> ModelConfig {
    let n_blocks = 1 + rng.below(2);
    let dropout = if rng.bernoulli(0.5) { 0.0 } else { rng.uniform_range(0.0, 0.5) };
    let mut arch = match family {
        Family::Mlp => Architecture::mlp(n_blocks, 2 + rng.below(6), dropout),
        Family::Moe | Family::Ggmoe => {
            let w = 2 + rng.below(4);
            let k = 2 + rng.below(3);
            let mut a = Architecture::moe(n_blocks, w * k + rng.below(w), w, dropout);
            if family == Family::Ggmoe {
                a.family = Family::Ggmoe;
                a.tau = Some(rng.uniform_range(0.5, 3.0));
            }
            a
        }
    };
    if embedding {
        arch = arch.with_embedding(2 + rng.below(3), 2 + rng.below(3));
    }
    let task = match rng.below(3) {
        0 => Task::Regression,
        1 => Task::Binclass,
        _ => Task::Multiclass { n_classes: 3 },
    };
    let input = InputSpec {
        n_numeric: 1 + rng.below(3),
        n_other: rng.below(3),
    };
    ModelConfig::new(arch, task, input).unwrap()
}

/// Random encoded batch matching `config`.
pub fn random_batch(config: &ModelConfig, rows: usize, rng: &mut Rng) -> Encoded {
    let input = config.input;
    let numeric = uniform_tensor(&[rows, input.n_numeric], -2.0, 2.0, rng);
    let other = Tensor::new(
        vec![rows, input.n_other],
        (0..rows * input.n_other).map(|_| f64::from(u8::from(rng.bernoulli(0.5)))).collect(),
    );
    let ple = config
        .arch
        .embedding
        .map(|e| uniform_tensor(&[rows, input.n_numeric * e.n_bins], 0.0, 1.0, rng));
    let targets = match config.task.n_classes() {
        None => Targets::Real((0..rows).map(|_| rng.normal()).collect()),
        Some(c) => Targets::Class((0..rows).map(|_| rng.below(c)).collect()),
    };
    Encoded {
        numeric,
        other,
        ple,
        raw_targets: targets.clone(),
        targets,
    }
}

pub fn random_model(family: Family, embedding: bool, rng: &mut Rng) -> (Model, Encoded) {
    let config = small_config(family, embedding, rng);
    let mut init = rng.fork(1);
    let model = Model::init(config, &mut init).unwrap();
    // perturb biases away from zero so every code path carries signal
    let mut params = model.params().clone();
    for t in &mut params.tensors {
        for v in t.data_mut() {
            *v += rng.uniform_range(-0.3, 0.3);
        }
    }
    let mut model = model;
    model.set_params(params).unwrap();
    let batch = random_batch(model.config(), 6, rng);
    (model, batch)
}
