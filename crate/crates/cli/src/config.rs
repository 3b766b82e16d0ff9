use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabmoe::model::{Architecture, Family};
use tabmoe::train::TrainConfig;
use tabmoe::tune::{SpacePreset, DEFAULT_BUDGET};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tune,
    Train,
    Evaluate,
    Benchmark,
    Rank,
    CountParams,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub family: Family,
    #[serde(default)]
    pub embedding: bool,
    /// Display id; defaults to the family's display name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ModelEntry {
    pub fn display_name(&self) -> String {
        let mut arch = Architecture::mlp(1, 1, 0.0);
        arch.family = self.family;
        if self.embedding {
            arch = arch.with_embedding(1, 2);
        }
        arch.display_name()
    }

    /// Directory name of this family/embedding combination's tuning output.
    pub fn tune_slug(&self) -> String {
        let e = if self.embedding { "e-" } else { "" };
        format!("{e}{}", self.family)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub count: usize,
    pub base: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            count: tabmoe::eval::DEFAULT_SEEDS,
            base: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
}

impl Default for Training {
    fn default() -> Self {
        let t = TrainConfig::new(1e-3, 0.0, 0);
        Training {
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
            clip_norm: t.clip_norm,
        }
    }
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_mc_samples() -> usize {
    10
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub dataset: PathBuf,
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub search_seed: u64,
    #[serde(default)]
    pub space: SpacePreset,
    /// Gate-noise draws for Gumbel-softmax prediction.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Extra sample counts scored and timed for Gumbel-softmax models.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_compare: Vec<usize>,
    #[serde(default)]
    pub training: Training,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        if cfg.dataset.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.dataset = base.join(&cfg.dataset);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.models.is_empty() {
            return bad("config lists no models".into());
        }
        if self.mc_samples == 0 || self.mc_compare.contains(&0) {
            return bad("mc_samples must be at least 1".into());
        }
        if self.seeds.count == 0 || self.budget == 0 || self.workers == 0 {
            return bad("seeds.count, budget and workers must be at least 1".into());
        }
        if !self.dataset.is_file() {
            return bad(format!("dataset manifest {} does not exist", self.dataset.display()));
        }
        self.train_config(1e-3, 0.0, 0).validate()?;
        Ok(())
    }

    pub fn train_config(&self, learning_rate: f64, weight_decay: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            patience: self.training.patience,
            max_epochs: self.training.max_epochs,
            clip_norm: self.training.clip_norm,
            mc_samples: self.mc_samples,
            ..TrainConfig::new(learning_rate, weight_decay, seed)
        }
    }

    /// Unique display id per model entry, in entry order.
    pub fn model_ids(&self) -> Vec<String> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        self.models
            .iter()
            .map(|m| {
                let base = m.name.clone().unwrap_or_else(|| m.display_name());
                let n = seen.entry(base.clone()).or_insert(0);
                *n += 1;
                if *n == 1 {
                    base
                } else {
                    format!("{base} #{n}")
                }
            })
            .collect()
    }

    /// Sample counts scored for a Gumbel-softmax model: `mc_samples` first,
    /// then `mc_compare` without repeats.
    pub fn mc_values(&self) -> Vec<usize> {
        let mut v = vec![self.mc_samples];
        for &m in &self.mc_compare {
            if !v.contains(&m) {
                v.push(m);
            }
        }
        v
    }
}

/// Lowercase file-system-safe form of a model id.
pub fn slug(id: &str) -> String {
    let mut s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_slugs() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"dataset": "d.json", "models": [{"family": "ggmoe", "embedding": true}, {"family": "ggmoe", "embedding": true}, {"family": "mlp"}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.model_ids(), ["GG E+MoE", "GG E+MoE #2", "MLP"]);
        assert_eq!(slug("GG E+MoE #2"), "gg-e-moe-2");
        assert_eq!(cfg.models[0].tune_slug(), "e-ggmoe");
        assert_eq!(cfg.mc_samples, 10);
        assert_eq!(cfg.seeds, Seeds { count: 15, base: 0 });
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: Result<RunConfig, _> = serde_json::from_str(r#"{"dataset": "d", "models": [], "budgte": 3}"#);
        assert!(r.is_err());
    }
}
