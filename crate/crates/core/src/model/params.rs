use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Which entries of a tensor receive decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    All,
    None,
    /// Gate matrix: every column except the trailing bias column.
    AllButLastColumn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: Decay,
}

impl ParamSpec {
    fn weight(name: String, rows: usize, cols: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![rows, cols],
            decay: Decay::All,
        }
    }

    fn bias(name: String, n: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![n],
            decay: Decay::None,
        }
    }
}

/// Index of each parameter group inside the flat tensor list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayoutIndex {
    /// `(weight, bias)` per numeric feature.
    pub embedding: Vec<(usize, usize)>,
    /// Per expert: `(weight, bias)` per block, then the head pair.
    pub experts: Vec<ExpertIndex>,
    pub gate: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ExpertIndex {
    pub blocks: Vec<(usize, usize)>,
    pub head: (usize, usize),
}

/// Parameter tensors in checkpoint order: embedding, experts in index order
/// (blocks, then head), gate.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    layout_with_index(config).0
}

pub(crate) fn layout_with_index(config: &ModelConfig) -> (Vec<ParamSpec>, LayoutIndex) {
    let mut specs = Vec::new();
    let mut push = |s: ParamSpec| {
        specs.push(s);
        specs.len() - 1
    };
    let mut embedding = Vec::new();
    if let Some(e) = config.arch.embedding {
        for f in 0..config.input.n_numeric {
            let w = push(ParamSpec::weight(format!("embedding.{f}.weight"), e.n_bins, e.d_embedding));
            let b = push(ParamSpec::bias(format!("embedding.{f}.bias"), e.d_embedding));
            embedding.push((w, b));
        }
    }
    let m = config.input_width();
    let width = config.arch.expert_width();
    let out = config.output_dim();
    let mut experts = Vec::new();
    for k in 0..config.num_experts() {
        let mut blocks = Vec::new();
        let mut fan_in = m;
        for i in 0..config.arch.n_blocks {
            let w = push(ParamSpec::weight(format!("expert.{k}.block.{i}.weight"), fan_in, width));
            let b = push(ParamSpec::bias(format!("expert.{k}.block.{i}.bias"), width));
            blocks.push((w, b));
            fan_in = width;
        }
        let w = push(ParamSpec::weight(format!("expert.{k}.head.weight"), width, out));
        let b = push(ParamSpec::bias(format!("expert.{k}.head.bias"), out));
        experts.push(ExpertIndex { blocks, head: (w, b) });
    }
    let gate = config.family().is_moe().then(|| {
        push(ParamSpec {
            name: "gate.weight".into(),
            shape: vec![config.num_experts(), m + 1],
            decay: Decay::AllButLastColumn,
        })
    });
    (
        specs,
        LayoutIndex {
            embedding,
            experts,
            gate,
        },
    )
}

/// Trainable tensors of one model, in [`layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Weights `~ U(−1/√fan_in, 1/√fan_in)`, biases (and the gate's bias
    /// column) zero.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let tensors = layout(config)
            .into_iter()
            .map(|spec| {
                let mut t = Tensor::zeros(&spec.shape);
                match spec.decay {
                    Decay::None => {}
                    Decay::All => {
                        let bound = 1.0 / (spec.shape[0] as f64).sqrt();
                        t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-bound, bound));
                    }
                    Decay::AllButLastColumn => {
                        let cols = spec.shape[1];
                        let bound = 1.0 / ((cols - 1).max(1) as f64).sqrt();
                        for row in t.data_mut().chunks_mut(cols) {
                            for v in &mut row[..cols - 1] {
                                *v = rng.uniform_range(-bound, bound);
                            }
                        }
                    }
                }
                t
            })
            .collect();
        Ok(ModelParams { tensors })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            tensors: layout(config).iter().map(|s| Tensor::zeros(&s.shape)).collect(),
        }
    }

    /// Total number of scalars held.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = layout(config);
        if specs.len() != self.tensors.len() {
            return Err(Error::dim("model params", &[specs.len()], &[self.tensors.len()]));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if s.shape != t.shape() {
                return Err(Error::dim("model params", &s.shape, t.shape()));
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"TMOECKPT";
const FORMAT_VERSION: u32 = 1;

/// JSON header of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub input_width: usize,
    pub n_params: usize,
}

/// Serializes a checkpoint: 8-byte magic, little-endian `u64` header length,
/// canonical JSON header, then every parameter as a little-endian `f64` in
/// layout order.
pub fn encode_checkpoint(config: &ModelConfig, params: &ModelParams, seed: u64) -> Result<Vec<u8>> {
    params.check_against(config)?;
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        config: config.clone(),
        seed,
        input_width: config.input_width(),
        n_params: params.n_scalars(),
    };
    let head = crate::json::to_canonical_string(&header)?;
    let mut out = Vec::with_capacity(16 + head.len() + 8 * header.n_params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(head.as_bytes());
    for t in &params.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;
    let payload = &bytes[16 + hlen..];
    if payload.len() != 8 * header.n_params {
        return Err(bad(&format!(
            "payload holds {} bytes, header promises {} parameters",
            payload.len(),
            header.n_params
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors = Vec::new();
    for spec in layout(&header.config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.len() != n {
            return Err(bad("payload shorter than layout"));
        }
        tensors.push(Tensor::new(spec.shape, data));
    }
    if values.next().is_some() {
        return Err(bad("payload longer than layout"));
    }
    Ok((header, ModelParams { tensors }))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams, seed: u64) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_checkpoint(config, params, seed)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
