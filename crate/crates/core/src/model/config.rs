use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;

/// Upper bound on the number of experts.
pub const MAX_EXPERTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mlp,
    Moe,
    Ggmoe,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mlp, Family::Moe, Family::Ggmoe];

    pub fn is_moe(self) -> bool {
        !matches!(self, Family::Mlp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::Moe => "moe",
            Family::Ggmoe => "ggmoe",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Family::Mlp),
            "moe" => Ok(Family::Moe),
            "ggmoe" | "gg-moe" | "gg_moe" => Ok(Family::Ggmoe),
            other => Err(Error::Domain(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub d_embedding: usize,
    pub n_bins: usize,
}

/// Architecture hyperparameters, independent of the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub family: Family,
    pub n_blocks: usize,
    pub d_block: usize,
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_block_per_expert: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingConfig>,
}

impl Architecture {
    pub fn mlp(n_blocks: usize, d_block: usize, dropout: f64) -> Self {
        Architecture {
            family: Family::Mlp,
            n_blocks,
            d_block,
            dropout,
            d_block_per_expert: None,
            tau: None,
            embedding: None,
        }
    }

    pub fn moe(n_blocks: usize, d_block: usize, per_expert: usize, dropout: f64) -> Self {
        Architecture {
            family: Family::Moe,
            d_block_per_expert: Some(per_expert),
            ..Architecture::mlp(n_blocks, d_block, dropout)
        }
    }

    pub fn ggmoe(n_blocks: usize, d_block: usize, per_expert: usize, dropout: f64, tau: f64) -> Self {
        Architecture {
            family: Family::Ggmoe,
            tau: Some(tau),
            ..Architecture::moe(n_blocks, d_block, per_expert, dropout)
        }
    }

    pub fn with_embedding(mut self, d_embedding: usize, n_bins: usize) -> Self {
        self.embedding = Some(EmbeddingConfig { d_embedding, n_bins });
        self
    }

    /// `floor(d_block / d_block_per_expert)` for mixtures, 1 for the MLP.
    pub fn num_experts(&self) -> usize {
        match (self.family, self.d_block_per_expert) {
            (Family::Mlp, _) => 1,
            (_, Some(w)) if w > 0 => self.d_block / w,
            _ => 0,
        }
    }

    /// Hidden width of each expert.
    pub fn expert_width(&self) -> usize {
        match self.family {
            Family::Mlp => self.d_block,
            _ => self.d_block_per_expert.unwrap_or(0),
        }
    }

    /// Display name: `MLP`, `E+MoE`, `GG E+MoE`, ...
    pub fn display_name(&self) -> String {
        let e = if self.embedding.is_some() { "E+" } else { "" };
        match self.family {
            Family::Mlp => format!("{e}MLP"),
            Family::Moe => format!("{e}MoE"),
            Family::Ggmoe => format!("GG {e}MoE"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if self.d_block == 0 {
            return bad("d_block must be positive".into());
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 0.5], got {}", self.dropout));
        }
        match self.family {
            Family::Mlp => {
                if self.d_block_per_expert.is_some() {
                    return bad("d_block_per_expert is only valid for mixtures".into());
                }
            }
            _ => {
                let Some(w) = self.d_block_per_expert.filter(|&w| w > 0) else {
                    return bad("mixtures need a positive d_block_per_expert".into());
                };
                let k = self.d_block / w;
                if !(1..=MAX_EXPERTS).contains(&k) {
                    return bad(format!(
                        "d_block {} / d_block_per_expert {w} gives {k} experts, outside 1..={MAX_EXPERTS}",
                        self.d_block
                    ));
                }
            }
        }
        match (self.family, self.tau) {
            (Family::Ggmoe, Some(t)) if t > 0.0 && t.is_finite() => {}
            (Family::Ggmoe, _) => return bad("ggmoe needs a positive finite tau".into()),
            (_, Some(_)) => return bad("tau is only valid for ggmoe".into()),
            _ => {}
        }
        if let Some(e) = self.embedding {
            if e.d_embedding == 0 || e.n_bins < 2 {
                return bad(format!("embedding needs d_embedding >= 1 and n_bins >= 2, got {e:?}"));
            }
        }
        Ok(())
    }
}

/// Column structure of the encoded input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub n_numeric: usize,
    /// Binary plus one-hot width.
    pub n_other: usize,
}

impl InputSpec {
    pub fn of(pre: &Preprocessor) -> Self {
        InputSpec {
            n_numeric: pre.n_numeric(),
            n_other: pre.n_other(),
        }
    }

    pub fn raw_width(&self) -> usize {
        self.n_numeric + self.n_other
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub arch: Architecture,
    pub task: Task,
    pub input: InputSpec,
}

impl ModelConfig {
    pub fn new(arch: Architecture, task: Task, input: InputSpec) -> Result<Self> {
        let c = ModelConfig { arch, task, input };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.input_width() == 0 {
            return Err(Error::Config("model input has zero width".into()));
        }
        if let Some(c) = self.task.n_classes() {
            if c < 2 {
                return Err(Error::Config("classification needs at least 2 classes".into()));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.arch.family
    }

    pub fn num_experts(&self) -> usize {
        self.arch.num_experts()
    }

    pub fn output_dim(&self) -> usize {
        self.task.output_dim()
    }

    /// Width `M'` seen by the experts and the gate.
    pub fn input_width(&self) -> usize {
        match self.arch.embedding {
            Some(e) => self.input.n_numeric * e.d_embedding + self.input.n_other,
            None => self.input.raw_width(),
        }
    }
}
