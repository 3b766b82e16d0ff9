//! Seeded random search over architecture and optimizer hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::run_parallel;
use crate::model::{Architecture, EmbeddingConfig, Family};
use crate::numerics::Rng;

/// Default number of trials per model.
pub const DEFAULT_BUDGET: usize = 100;

/// One hyperparameter's distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    /// Uniform over `{lo, lo + step, …, hi}`.
    IntUniform { lo: u64, hi: u64, step: u64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Zero with probability ½, otherwise the inner distribution.
    ZeroOr { inner: Box<Dist> },
    Fixed { value: f64 },
}

impl Dist {
    pub fn int(lo: u64, hi: u64, step: u64) -> Dist {
        Dist::IntUniform { lo, hi, step }
    }

    pub fn uniform(lo: f64, hi: f64) -> Dist {
        Dist::Uniform { lo, hi }
    }

    pub fn log_uniform(lo: f64, hi: f64) -> Dist {
        Dist::LogUniform { lo, hi }
    }

    pub fn zero_or(inner: Dist) -> Dist {
        Dist::ZeroOr { inner: Box::new(inner) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Dist::IntUniform { lo, hi, step } => lo <= hi && *step > 0 && (hi - lo) % step == 0,
            Dist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Dist::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo <= hi,
            Dist::ZeroOr { inner } => return inner.validate(),
            Dist::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Dist::IntUniform { lo, hi, step } => {
                let n = (hi - lo) / step + 1;
                (lo + step * rng.below(n as usize) as u64) as f64
            }
            Dist::Uniform { lo, hi } => rng.uniform_range(*lo, *hi),
            Dist::LogUniform { lo, hi } => rng.uniform_range(lo.ln(), hi.ln()).exp().clamp(*lo, *hi),
            Dist::ZeroOr { inner } => {
                if rng.bernoulli(0.5) {
                    0.0
                } else {
                    inner.sample(rng)
                }
            }
            Dist::Fixed { value } => *value,
        }
    }

    /// Whether `v` is a value this distribution can produce.
    pub fn contains(&self, v: f64) -> bool {
        match self {
            Dist::IntUniform { lo, hi, step } => {
                v.fract() == 0.0 && v >= *lo as f64 && v <= *hi as f64 && (v as u64 - lo) % step == 0
            }
            Dist::Uniform { lo, hi } | Dist::LogUniform { lo, hi } => *lo <= v && v <= *hi,
            Dist::ZeroOr { inner } => v == 0.0 || inner.contains(v),
            Dist::Fixed { value } => v == *value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub d_embedding: Dist,
    pub n_bins: Dist,
}

/// Search space of one model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: Family,
    pub n_blocks: Dist,
    pub d_block: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_block_per_expert: Option<Dist>,
    pub dropout: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Dist>,
    pub learning_rate: Dist,
    pub weight_decay: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSpace>,
}

/// Named space presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpacePreset {
    /// The published search spaces.
    #[default]
    Paper,
    /// Narrower widths and depths for single-core runs on small data.
    Desk,
}

/// The published search space of `family`.
pub fn default_space(family: Family, with_embedding: bool) -> SearchSpace {
    let max_blocks = if with_embedding { 5 } else { 6 };
    let dropout = Dist::zero_or(Dist::uniform(0.0, 0.5));
    let weight_decay = Dist::zero_or(Dist::log_uniform(1e-4, 0.1));
    let embedding = with_embedding.then(|| EmbeddingSpace {
        d_embedding: Dist::int(8, 32, 4),
        n_bins: Dist::int(2, 128, 1),
    });
    match family {
        Family::Mlp => SearchSpace {
            family,
            n_blocks: Dist::int(1, max_blocks, 1),
            d_block: Dist::int(64, 1024, 16),
            d_block_per_expert: None,
            dropout,
            tau: None,
            learning_rate: Dist::log_uniform(3e-5, 1e-3),
            weight_decay,
            embedding,
        },
        Family::Moe | Family::Ggmoe => SearchSpace {
            family,
            n_blocks: Dist::int(1, max_blocks, 1),
            d_block: Dist::int(128, 1280, 64),
            d_block_per_expert: Some(Dist::int(32, 64, 32)),
            dropout,
            tau: (family == Family::Ggmoe).then(|| Dist::uniform(0.5, 3.0)),
            learning_rate: Dist::log_uniform(3e-4, 1e-2),
            weight_decay,
            embedding,
        },
    }
}

/// A reduced space for desk-scale runs: the same distribution shapes with
/// smaller widths and depths.
pub fn desk_space(family: Family, with_embedding: bool) -> SearchSpace {
    let mut s = default_space(family, with_embedding);
    s.n_blocks = Dist::int(1, 3, 1);
    s.learning_rate = Dist::log_uniform(1e-3, 1e-2);
    match family {
        Family::Mlp => s.d_block = Dist::int(16, 128, 16),
        _ => {
            s.d_block = Dist::int(64, 256, 32);
            s.d_block_per_expert = Some(Dist::int(16, 32, 16));
        }
    }
    if let Some(e) = &mut s.embedding {
        e.d_embedding = Dist::int(4, 12, 4);
        e.n_bins = Dist::int(2, 32, 1);
    }
    s
}

pub fn space(preset: SpacePreset, family: Family, with_embedding: bool) -> SearchSpace {
    match preset {
        SpacePreset::Paper => default_space(family, with_embedding),
        SpacePreset::Desk => desk_space(family, with_embedding),
    }
}

/// A sampled configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub arch: Architecture,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let dists = [&self.n_blocks, &self.d_block, &self.dropout, &self.learning_rate, &self.weight_decay];
        for d in dists.into_iter().chain(&self.d_block_per_expert).chain(&self.tau) {
            d.validate()?;
        }
        if let Some(e) = &self.embedding {
            e.d_embedding.validate()?;
            e.n_bins.validate()?;
        }
        if self.family.is_moe() != self.d_block_per_expert.is_some() || (self.family == Family::Ggmoe) != self.tau.is_some() {
            return Err(Error::Config(format!("search space does not match family {}", self.family)));
        }
        Ok(())
    }

    /// Independent draws for every hyperparameter, in a fixed order.
    pub fn sample(&self, rng: &mut Rng) -> TrialSpec {
        let n_blocks = self.n_blocks.sample(rng) as usize;
        let d_block = self.d_block.sample(rng) as usize;
        let per_expert = self.d_block_per_expert.as_ref().map(|d| d.sample(rng) as usize);
        let dropout = self.dropout.sample(rng);
        let tau = self.tau.as_ref().map(|d| d.sample(rng));
        let learning_rate = self.learning_rate.sample(rng);
        let weight_decay = self.weight_decay.sample(rng);
        let embedding = self.embedding.as_ref().map(|e| EmbeddingConfig {
            d_embedding: e.d_embedding.sample(rng) as usize,
            n_bins: e.n_bins.sample(rng) as usize,
        });
        TrialSpec {
            arch: Architecture {
                family: self.family,
                n_blocks,
                d_block,
                dropout,
                d_block_per_expert: per_expert,
                tau,
                embedding,
            },
            learning_rate,
            weight_decay,
        }
    }

    /// Whether every value of `spec` lies in this space.
    pub fn contains(&self, spec: &TrialSpec) -> bool {
        let a = &spec.arch;
        let opt = |d: &Option<Dist>, v: Option<f64>| match (d, v) {
            (Some(d), Some(v)) => d.contains(v),
            (None, None) => true,
            _ => false,
        };
        let emb = match (&self.embedding, a.embedding) {
            (Some(s), Some(e)) => s.d_embedding.contains(e.d_embedding as f64) && s.n_bins.contains(e.n_bins as f64),
            (None, None) => true,
            _ => false,
        };
        a.family == self.family
            && self.n_blocks.contains(a.n_blocks as f64)
            && self.d_block.contains(a.d_block as f64)
            && opt(&self.d_block_per_expert, a.d_block_per_expert.map(|w| w as f64))
            && self.dropout.contains(a.dropout)
            && opt(&self.tau, a.tau)
            && self.learning_rate.contains(spec.learning_rate)
            && self.weight_decay.contains(spec.weight_decay)
            && emb
    }
}

/// What an objective reports for a successful trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub val_score: f64,
    pub n_params: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One line of the trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub spec: TrialSpec,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_params: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Index into `trials` of the best successful trial, if any succeeded.
    pub best: Option<usize>,
    pub trials: Vec<TrialResult>,
    /// Wall time of each trial in milliseconds, aligned with `trials`.
    pub wall_ms: Vec<f64>,
}

impl SearchResult {
    pub fn best_trial(&self) -> Option<&TrialResult> {
        self.best.map(|i| &self.trials[i])
    }
}

/// Sampling stream of trial `i` under search seed `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> Rng {
    Rng::new(seed).fork(trial as u64)
}

/// Seed handed to the objective for trial `i`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    trial_rng(seed, trial).fork(u64::MAX).next_u64()
}

/// Random search: trial `i` samples from [`trial_rng`], runs `objective`
/// with [`trial_seed`], and the highest validation score wins (earliest on
/// ties). Failed trials are kept in the log and never chosen; when every
/// trial fails there is no best.
pub fn run_search<F>(space: &SearchSpace, budget: usize, seed: u64, workers: usize, objective: F) -> Result<SearchResult>
where
    F: Fn(&TrialSpec, u64) -> Result<TrialOutcome> + Sync + Send,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::Domain("budget must be at least 1".into()));
    }
    let specs: Vec<TrialSpec> = (0..budget).map(|i| space.sample(&mut trial_rng(seed, i))).collect();
    let indexed: Vec<(usize, &TrialSpec)> = specs.iter().enumerate().collect();
    let outcomes = run_parallel(workers, &indexed, |&(i, spec)| {
        let start = std::time::Instant::now();
        let out = spec
            .arch
            .validate()
            .and_then(|()| objective(spec, trial_seed(seed, i)))
            .and_then(|o| {
                if o.val_score.is_finite() {
                    Ok(o)
                } else {
                    Err(Error::Numeric(format!("validation score {}", o.val_score)))
                }
            });
        (out, start.elapsed().as_secs_f64() * 1e3)
    })?;
    let mut trials = Vec::with_capacity(budget);
    let mut wall_ms = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for (i, (spec, (out, ms))) in specs.into_iter().zip(outcomes).enumerate() {
        wall_ms.push(ms);
        let result = match out {
            Ok(o) => {
                if best.map_or(true, |(_, b)| o.val_score > b) {
                    best = Some((i, o.val_score));
                }
                TrialResult {
                    trial: i,
                    spec,
                    status: TrialStatus::Ok,
                    val_score: Some(o.val_score),
                    n_params: Some(o.n_params),
                    epochs_run: Some(o.epochs_run),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("trial {i} failed: {e}");
                TrialResult {
                    trial: i,
                    spec,
                    status: TrialStatus::Failed,
                    val_score: None,
                    n_params: None,
                    epochs_run: None,
                    error: Some(e.to_string()),
                }
            }
        };
        trials.push(result);
    }
    Ok(SearchResult {
        best: best.map(|(i, _)| i),
        trials,
        wall_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_bounds() {
        let gg = default_space(Family::Ggmoe, true);
        assert_eq!(gg.tau, Some(Dist::uniform(0.5, 3.0)));
        assert_eq!(gg.embedding.unwrap().n_bins, Dist::int(2, 128, 1));
        assert_eq!(default_space(Family::Mlp, true).n_blocks, Dist::int(1, 5, 1));
        assert_eq!(default_space(Family::Mlp, false).n_blocks, Dist::int(1, 6, 1));
        for f in Family::ALL {
            default_space(f, true).validate().unwrap();
            desk_space(f, false).validate().unwrap();
        }
    }

    #[test]
    fn int_grid_contains() {
        let d = Dist::int(128, 1280, 64);
        assert!(d.contains(192.0));
        assert!(!d.contains(200.0));
        assert!(!d.contains(1344.0));
        assert!(Dist::int(1, 3, 3).validate().is_err());
    }
}
