//! Parameter containers, initialization, forward passes and parameter
//! counting for the MLP, MoE and GG MoE families.

mod config;
mod count;
mod forward;
mod params;

pub use config::{Architecture, EmbeddingConfig, Family, InputSpec, ModelConfig, MAX_EXPERTS};
pub use count::{count_backbone_params, count_params};
pub use forward::{GateNoise, Model, Mode, PredictOutput, Recorded, PREDICT_CHUNK};
pub use params::{
    decode_checkpoint, encode_checkpoint, layout, load_checkpoint, save_checkpoint, CheckpointHeader, Decay,
    ModelParams, ParamSpec,
};
