//! Dataset-to-model plumbing shared by tuning, benchmarking and the CLI.

use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::Result;
use crate::model::{Architecture, InputSpec, Model, ModelConfig};
use crate::numerics::{Rng, Tensor};
use crate::preprocess::{EncodedBundle, Encoded, Preprocessor};
use crate::train::{self, fit, TrainConfig, TrainReport};

/// Data split selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl EncodedBundle {
    pub fn split(&self, split: Split) -> &Encoded {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// A fitted preprocessor and the model trained on its encoding.
#[derive(Clone, Debug)]
pub struct Trained {
    pub preprocessor: Preprocessor,
    pub model: Model,
    pub report: TrainReport,
}

/// Encodes `bundle` for `arch` (piecewise-linear bins when it embeds).
pub fn encode_for(bundle: &DatasetBundle, arch: &Architecture) -> Result<EncodedBundle> {
    EncodedBundle::new(bundle, arch.embedding.map(|e| e.n_bins))
}

/// Model configuration of `arch` on an encoded dataset.
pub fn model_config(arch: &Architecture, data: &EncodedBundle) -> Result<ModelConfig> {
    ModelConfig::new(arch.clone(), data.preprocessor.task, InputSpec::of(&data.preprocessor))
}

/// Initializes from `seed` and trains with `train.seed = seed`.
pub fn train_on(data: &EncodedBundle, arch: &Architecture, train: &TrainConfig, seed: u64) -> Result<Trained> {
    let config = model_config(arch, data)?;
    let model = Model::init(config, &mut Rng::new(seed).fork(INIT_STREAM))?;
    let cfg = TrainConfig { seed, ..train.clone() };
    let out = fit(model, &data.train, &data.val, data.preprocessor.target, &cfg)?;
    Ok(Trained {
        preprocessor: data.preprocessor.clone(),
        model: out.model,
        report: out.report,
    })
}

const INIT_STREAM: u64 = 0x1417;
const EVAL_STREAM: u64 = 0xe7a1;

/// Noise stream used when scoring a trained model of run `seed`.
pub fn eval_rng(seed: u64) -> Rng {
    Rng::new(seed).fork(EVAL_STREAM)
}

impl Trained {
    /// Predictions on the raw target scale.
    pub fn predict(&self, data: &Encoded, mc_samples: usize, rng: &Rng) -> Result<Tensor> {
        train::predict_raw(&self.model, data, self.preprocessor.target, mc_samples, rng)
    }

    pub fn score(&self, data: &Encoded, mc_samples: usize, rng: &Rng) -> Result<f64> {
        train::score_split(&self.model, data, self.preprocessor.target, mc_samples, rng)
    }
}
