//! Forward passes for the three families.
//!
//! Every expert is an MLP: `n_blocks × (Linear → ReLU → Dropout)` followed by
//! a linear head (width 1 for regression, `C` for classification, where the
//! head is softmax-normalized). The gate is a multiclass logistic regression
//! over `[x, 1]`, optionally perturbed with Gumbel noise and tempered by
//! `tau`. Classification mixes the experts' categorical distributions, so
//! the output rows are probabilities in every family.

use super::config::{Family, ModelConfig};
use super::params::{layout_with_index, LayoutIndex, ModelParams};
use crate::data::Targets;
use crate::error::{Error, Result};
use crate::numerics::{entropy, sample_gumbel, Rng, Tape, Tensor, Var};
use crate::preprocess::Encoded;

/// Rows per chunk when predicting over a whole split.
pub const PREDICT_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How the Gumbel-softmax gate obtains its noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateNoise {
    /// One fresh Gumbel(0, 1) vector per row.
    Sample,
    /// Noise forced to zero (diagnostics only).
    Zero,
}

/// Nodes produced by recording one forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub output: Var,
    pub gate: Option<Var>,
    pub logits: Option<Var>,
    pub experts: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictOutput {
    /// `[n × 1]` regression values (model space) or `[n × C]` probabilities.
    pub output: Tensor,
    /// `[n × K]` gate probabilities for mixtures.
    pub gate: Option<Tensor>,
    pub gate_entropy: Option<Vec<f64>>,
}

impl PredictOutput {
    fn from_parts(output: Tensor, gate: Option<Tensor>) -> Self {
        let gate_entropy = gate
            .as_ref()
            .map(|g| (0..g.rows()).map(|r| entropy(g.row(r))).collect());
        PredictOutput {
            output,
            gate,
            gate_entropy,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    index: LayoutIndex,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        let (_, index) = layout_with_index(&config);
        Ok(Model { config, params, index })
    }

    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Model::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn set_params(&mut self, params: ModelParams) -> Result<()> {
        params.check_against(&self.config)?;
        self.params = params;
        Ok(())
    }

    fn check_batch(&self, batch: &Encoded) -> Result<()> {
        let input = self.config.input;
        if batch.numeric.cols() != input.n_numeric || batch.other.cols() != input.n_other {
            return Err(Error::dim(
                "model input",
                &[input.n_numeric, input.n_other],
                &[batch.numeric.cols(), batch.other.cols()],
            ));
        }
        if let Some(e) = self.config.arch.embedding {
            let want = input.n_numeric * e.n_bins;
            match &batch.ple {
                Some(p) if p.cols() == want => {}
                Some(p) => return Err(Error::dim("model input (piecewise-linear)", &[want], &[p.cols()])),
                None => return Err(Error::Config("embedding model needs piecewise-linear encodings".into())),
            }
        }
        Ok(())
    }

    /// Input representation `[B × M']`: the dense encoding, or the embedded
    /// numeric features followed by the binary/one-hot block.
    fn record_input(&self, tape: &mut Tape, vars: &[Var], batch: &Encoded) -> Result<Var> {
        self.check_batch(batch)?;
        let Some(e) = self.config.arch.embedding else {
            return Ok(tape.constant(batch.dense()));
        };
        let ple = batch.ple.as_ref().expect("checked above");
        let t = e.n_bins;
        let rows = batch.n_rows();
        let mut parts = Vec::with_capacity(self.index.embedding.len() + 1);
        for (f, &(w, b)) in self.index.embedding.iter().enumerate() {
            let mut enc = Vec::with_capacity(rows * t);
            for r in 0..rows {
                enc.extend_from_slice(&ple.row(r)[f * t..(f + 1) * t]);
            }
            let c = tape.constant(Tensor::matrix(rows, t, enc));
            let h = tape.matmul(c, vars[w])?;
            let h = tape.add_bias(h, vars[b])?;
            parts.push(tape.relu(h));
        }
        if batch.other.cols() > 0 {
            parts.push(tape.constant(batch.other.clone()));
        }
        tape.concat_cols(&parts)
    }

    fn record_expert(&self, tape: &mut Tape, vars: &[Var], x: Var, k: usize, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let ex = &self.index.experts[k];
        let p = self.config.arch.dropout;
        let mut h = x;
        for &(w, b) in &ex.blocks {
            h = tape.matmul(h, vars[w])?;
            h = tape.add_bias(h, vars[b])?;
            h = tape.relu(h);
            if mode == Mode::Train && p > 0.0 {
                let shape = tape.value(h).shape().to_vec();
                let keep = 1.0 / (1.0 - p);
                let n = shape.iter().product();
                let mask = (0..n).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect();
                h = tape.mul_const(h, Tensor::new(shape, mask))?;
            }
        }
        let (w, b) = ex.head;
        let out = tape.matmul(h, vars[w])?;
        let out = tape.add_bias(out, vars[b])?;
        if self.config.task.is_regression() {
            Ok(out)
        } else {
            tape.softmax_rows(out)
        }
    }

    fn record_logits(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Option<Var>> {
        match self.index.gate {
            Some(g) => {
                let xa = tape.append_ones(x)?;
                Ok(Some(tape.matmul_t(xa, vars[g])?))
            }
            None => Ok(None),
        }
    }

    fn record_gate(&self, tape: &mut Tape, logits: Var, noise: GateNoise, rng: &mut Rng) -> Result<Var> {
        match (self.config.family(), self.config.arch.tau) {
            (Family::Ggmoe, Some(tau)) => {
                let shape = tape.value(logits).shape().to_vec();
                let s = match noise {
                    GateNoise::Sample => sample_gumbel(rng, shape.iter().product()).reshape(shape)?,
                    GateNoise::Zero => Tensor::zeros(&shape),
                };
                let z = tape.add_const(logits, s)?;
                let z = tape.scale(z, 1.0 / tau);
                tape.softmax_rows(z)
            }
            _ => tape.softmax_rows(logits),
        }
    }

    /// Records a full forward pass on `tape`. `vars` are the parameter nodes
    /// in layout order.
    pub fn record(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &Encoded,
        mode: Mode,
        noise: GateNoise,
        rng: &mut Rng,
    ) -> Result<Recorded> {
        if vars.len() != self.params.tensors.len() {
            return Err(Error::dim("model vars", &[self.params.tensors.len()], &[vars.len()]));
        }
        let x = self.record_input(tape, vars, batch)?;
        let experts = (0..self.index.experts.len())
            .map(|k| self.record_expert(tape, vars, x, k, mode, rng))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.record_logits(tape, vars, x)?;
        let (output, gate) = match logits {
            Some(l) => {
                let g = self.record_gate(tape, l, noise, rng)?;
                (tape.mixture(g, &experts)?, Some(g))
            }
            None => (experts[0], None),
        };
        Ok(Recorded {
            output,
            gate,
            logits,
            experts,
        })
    }

    /// Training loss: MSE for regression, mean negative log-likelihood of the
    /// (mixed) class probabilities otherwise.
    pub fn record_loss(&self, tape: &mut Tape, output: Var, targets: &Targets) -> Result<Var> {
        match targets {
            Targets::Real(y) => tape.mse(output, y),
            Targets::Class(c) => tape.nll(output, c),
        }
    }

    fn constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// One forward pass; a Gumbel-softmax gate draws a single noise sample.
    pub fn forward(&self, batch: &Encoded, mode: Mode, rng: &mut Rng) -> Result<PredictOutput> {
        self.forward_with_noise(batch, mode, GateNoise::Sample, rng)
    }

    pub fn forward_with_noise(&self, batch: &Encoded, mode: Mode, noise: GateNoise, rng: &mut Rng) -> Result<PredictOutput> {
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let rec = self.record(&mut tape, &vars, batch, mode, noise, rng)?;
        Ok(PredictOutput::from_parts(
            tape.value(rec.output).clone(),
            rec.gate.map(|g| tape.value(g).clone()),
        ))
    }

    /// Evaluation-mode prediction. Gumbel-softmax mixtures average
    /// `n_samples` gate draws over expert outputs and logits computed once;
    /// the result equals the mean of `n_samples` single-draw predictions
    /// taken in sequence from the same `rng`. The reported gate is the mean
    /// gate over draws.
    pub fn predict_mc(&self, batch: &Encoded, n_samples: usize, rng: &mut Rng) -> Result<PredictOutput> {
        if n_samples == 0 {
            return Err(Error::Domain("n_samples must be at least 1".into()));
        }
        if self.config.family() != Family::Ggmoe {
            return self.forward(batch, Mode::Eval, rng);
        }
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let x = self.record_input(&mut tape, &vars, batch)?;
        let experts = (0..self.index.experts.len())
            .map(|k| self.record_expert(&mut tape, &vars, x, k, Mode::Eval, rng))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.record_logits(&mut tape, &vars, x)?.expect("mixtures have a gate");

        let mut out_sum: Option<Tensor> = None;
        let mut gate_sum: Option<Tensor> = None;
        for _ in 0..n_samples {
            let g = self.record_gate(&mut tape, logits, GateNoise::Sample, rng)?;
            let y = tape.mixture(g, &experts)?;
            add_into(&mut out_sum, tape.value(y));
            add_into(&mut gate_sum, tape.value(g));
        }
        let n = n_samples as f64;
        let output = out_sum.expect("n_samples >= 1").map(|v| v / n);
        let gate = gate_sum.expect("n_samples >= 1").map(|v| v / n);
        Ok(PredictOutput::from_parts(output, Some(gate)))
    }

    /// [`Model::predict_mc`] over a whole split in row chunks; chunk `c`
    /// draws its noise from `rng.fork(c)`.
    pub fn predict(&self, data: &Encoded, n_samples: usize, rng: &Rng) -> Result<PredictOutput> {
        let n = data.n_rows();
        if n <= PREDICT_CHUNK {
            return self.predict_mc(data, n_samples, &mut rng.fork(0));
        }
        let mut outputs = Vec::new();
        let mut gates = Vec::new();
        for (c, start) in (0..n).step_by(PREDICT_CHUNK).enumerate() {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
            let part = self.predict_mc(&data.gather(&idx), n_samples, &mut rng.fork(c as u64))?;
            outputs.push(part.output);
            if let Some(g) = part.gate {
                gates.push(g);
            }
        }
        let output = stack_rows(&outputs);
        let gate = (!gates.is_empty()).then(|| stack_rows(&gates));
        Ok(PredictOutput::from_parts(output, gate))
    }

    /// Embedded input `[B × M']` (embedding configs only).
    pub fn embed(&self, batch: &Encoded) -> Result<Tensor> {
        if self.config.arch.embedding.is_none() {
            return Err(Error::Config("model has no embedding layer".into()));
        }
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let x = self.record_input(&mut tape, &vars, batch)?;
        Ok(tape.value(x).clone())
    }
}

fn add_into(acc: &mut Option<Tensor>, v: &Tensor) {
    match acc {
        Some(a) => a.data_mut().iter_mut().zip(v.data()).for_each(|(x, y)| *x += y),
        None => {
            let mut z = Tensor::zeros(v.shape());
            z.data_mut().iter_mut().zip(v.data()).for_each(|(x, y)| *x += y);
            *acc = Some(z);
        }
    }
}

fn stack_rows(parts: &[Tensor]) -> Tensor {
    let cols = parts[0].cols();
    let rows = parts.iter().map(Tensor::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols, data)
}
