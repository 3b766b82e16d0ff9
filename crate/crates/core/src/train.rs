//! Losses, AdamW with decoupled weight decay, global-norm clipping and the
//! early-stopped mini-batch loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{layout, Decay, GateNoise, Model, ModelParams, Mode};
use crate::numerics::{Rng, Tape, Tensor, PROB_FLOOR};
use crate::preprocess::{Encoded, TargetScaler};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

fn default_batch_size() -> usize {
    256
}
fn default_patience() -> usize {
    16
}
fn default_max_epochs() -> usize {
    1000
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_mc_samples() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Gate-noise draws when a Gumbel-softmax model scores the validation split.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, weight_decay: f64, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            weight_decay,
            batch_size: default_batch_size(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            clip_norm: default_clip_norm(),
            seed,
            mc_samples: default_mc_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 || self.mc_samples == 0 {
            return bad("batch_size, patience, max_epochs and mc_samples must be at least 1".into());
        }
        Ok(())
    }
}

/// Mean squared residual.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::dim("loss_mse", &[target.len()], &[pred.len()]));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean negative log-probability of the target class, probabilities floored
/// at [`PROB_FLOOR`].
pub fn loss_ce(probs: &Tensor, targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    if probs.rows() != targets.len() {
        return Err(Error::dim("loss_ce", &[targets.len()], &[probs.rows()]));
    }
    let mut total = 0.0;
    for (r, &c) in targets.iter().enumerate() {
        let row = probs.row(r);
        let p = row
            .get(c)
            .ok_or_else(|| Error::Domain(format!("class {c} outside [0, {})", row.len())))?;
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Global L2 norm of a gradient set.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales every gradient by `clip_norm / norm` when the global norm exceeds
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_global(grads: &mut [Tensor], clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(Error::Domain(format!("clip_norm must be positive, got {clip_norm}")));
    }
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(norm)
}

/// AdamW moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimizerState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One AdamW step: `θ ← θ − lr·wd·θ` on decayed entries, then the
/// bias-corrected Adam update.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    decay: &[Decay],
    state: &mut OptimizerState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != decay.len() || params.len() != state.m.len() {
        return Err(Error::dim("adamw", &[params.len()], &[grads.len(), decay.len(), state.m.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let shrink = 1.0 - learning_rate * weight_decay;
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::dim("adamw", params[i].shape(), grads[i].shape()));
        }
        let cols = params[i].shape().last().copied().unwrap_or(1).max(1);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let theta = params[i].data_mut();
        for (j, &g) in grads[i].data().iter().enumerate() {
            let decayed = match decay[i] {
                Decay::All => true,
                Decay::None => false,
                Decay::AllButLastColumn => j % cols != cols - 1,
            };
            if decayed {
                theta[j] *= shrink;
            }
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            theta[j] -= learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + EPSILON);
        }
    }
    Ok(())
}

/// Patience rule: stop once `patience` consecutive epochs fail to strictly
/// improve the best score.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, best_epoch: 0, stale: 0 }
    }

    /// Records the score of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> Progress {
        if self.best.map_or(true, |b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
            return Progress::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Progress::Stop
        } else {
            Progress::Stale
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_score: f64,
    pub train_loss: Vec<f64>,
    pub val_score: Vec<f64>,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub wall_time_ms: f64,
}

/// Trained parameters (from the best validation epoch) and the report.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Score of `model` on `data` against its raw targets. Regression outputs are
/// mapped back through `scaler` first.
pub fn score_split(model: &Model, data: &Encoded, scaler: Option<TargetScaler>, mc_samples: usize, rng: &Rng) -> Result<f64> {
    let out = predict_raw(model, data, scaler, mc_samples, rng)?;
    eval::score(&out, &data.raw_targets)
}

/// Predictions on the raw target scale.
pub fn predict_raw(model: &Model, data: &Encoded, scaler: Option<TargetScaler>, mc_samples: usize, rng: &Rng) -> Result<Tensor> {
    let mut out = model.predict(data, mc_samples, rng)?.output;
    if let (Some(s), Targets::Real(_)) = (scaler, &data.raw_targets) {
        out.data_mut().iter_mut().for_each(|v| *v = s.unscale(*v));
    }
    Ok(out)
}

const VAL_STREAM: u64 = 0x7a1;

/// Mini-batch training with patience-based early stopping. Returns the
/// parameters of the best validation epoch.
pub fn fit(model: Model, train: &Encoded, val: &Encoded, scaler: Option<TargetScaler>, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.n_rows() == 0 || val.n_rows() == 0 {
        return Err(Error::Domain("training needs non-empty train and validation splits".into()));
    }
    let start = Instant::now();
    let decay: Vec<Decay> = layout(model.config()).into_iter().map(|s| s.decay).collect();
    let root = Rng::new(cfg.seed);
    let mut params = model.params().clone();
    let mut model = model;
    let mut opt = OptimizerState::new(&params.tensors);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<ModelParams> = None;
    let mut train_loss = Vec::new();
    let mut val_score = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut diagnostic = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut epoch_rng = root.fork(epoch as u64);
        let order = epoch_rng.permutation(train.n_rows());
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = train.gather(idx);
            let (loss, mut grads) = batch_gradients(&model, &params, &batch, &mut epoch_rng)?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                stop_reason = StopReason::Diverged;
                diagnostic = Some(format!("non-finite loss or gradient at epoch {epoch}"));
                break 'epochs;
            }
            loss_sum += loss * idx.len() as f64;
            clip_global(&mut grads, cfg.clip_norm)?;
            adamw_step(&mut params.tensors, &grads, &decay, &mut opt, cfg.learning_rate, cfg.weight_decay)?;
        }
        model.set_params(params.clone())?;
        let score = score_split(&model, val, scaler, cfg.mc_samples, &root.fork(VAL_STREAM).fork(epoch as u64))?;
        if !score.is_finite() {
            stop_reason = StopReason::Diverged;
            diagnostic = Some(format!("non-finite validation score at epoch {epoch}"));
            break;
        }
        train_loss.push(loss_sum / train.n_rows() as f64);
        val_score.push(score);
        match stopper.observe(epoch, score) {
            Progress::Improved => best = Some(params.clone()),
            Progress::Stale => {}
            Progress::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let Some(best_params) = best else {
        return Err(Error::Numeric(
            diagnostic.unwrap_or_else(|| "training produced no finite validation score".into()),
        ));
    };
    if let Some(d) = &diagnostic {
        log::warn!("training diverged: {d}; keeping epoch {}", stopper.best_epoch());
    }
    model.set_params(best_params)?;
    let report = TrainReport {
        epochs_run: val_score.len(),
        best_epoch: stopper.best_epoch(),
        best_val_score: stopper.best().expect("a best snapshot exists"),
        train_loss,
        val_score,
        stop_reason,
        diagnostic,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(FitOutcome { model, report })
}

/// Loss and parameter gradients of one training-mode pass.
pub fn batch_gradients(model: &Model, params: &ModelParams, batch: &Encoded, rng: &mut Rng) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
    let rec = model.record(&mut tape, &vars, batch, Mode::Train, GateNoise::Sample, rng)?;
    let loss = model.record_loss(&mut tape, rec.output, &batch.targets)?;
    let value = tape.value(loss).data()[0];
    let mut g = tape.backward(loss)?;
    let grads = vars.iter().zip(&params.tensors).map(|(&v, p)| g.take_or_zeros(v, p)).collect();
    Ok((value, grads))
}
