//! Scoring, multi-seed aggregation, significance-aware ranking and timing.

mod rank;
mod report;
mod timing;

pub use rank::{rank_models, RankEntry, RankTable};
pub use report::{rank_csv, rank_text_table, stats_text_table};
pub use timing::{summarize, time_run, Stats, TimingStats, INFERENCE_REPETITIONS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::numerics::{argmax, Tensor};

/// Default number of seeds per model.
pub const DEFAULT_SEEDS: usize = 15;

/// Higher-is-better score: accuracy for class targets, `−RMSE` for real ones.
///
/// `output` is `[n × 1]` predictions on the target's scale, or `[n × C]`
/// class probabilities.
pub fn score(output: &Tensor, targets: &Targets) -> Result<f64> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Domain("cannot score an empty split".into()));
    }
    if output.rows() != n {
        return Err(Error::dim("score", &[n], &[output.rows()]));
    }
    match targets {
        Targets::Real(y) => Ok(-rmse(output.data(), y)?),
        Targets::Class(c) => {
            let hits = c
                .iter()
                .enumerate()
                .filter(|&(r, &label)| argmax(output.row(r)) == label)
                .count();
            Ok(hits as f64 / n as f64)
        }
    }
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Domain("cannot score an empty split".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::dim("rmse", &[target.len()], &[pred.len()]));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Scores of one model across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub model_id: String,
    /// Seeds that produced a score, aligned with `scores`.
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_seeds: Vec<u64>,
}

impl ScoreSummary {
    pub fn from_scores(model_id: impl Into<String>, seeds: Vec<u64>, scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Domain("a summary needs at least one score".into()));
        }
        if seeds.len() != scores.len() {
            return Err(Error::dim("score summary", &[seeds.len()], &[scores.len()]));
        }
        let (mean, std) = mean_std(&scores);
        Ok(ScoreSummary {
            model_id: model_id.into(),
            seeds,
            scores,
            mean,
            std,
            failed_seeds: Vec::new(),
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `run` for seeds `base_seed..base_seed + n_seeds` on up to `workers`
/// threads and summarizes the successful ones. Failed seeds are listed in
/// the summary; if every seed fails the first error is returned.
pub fn aggregate_seeds<F>(model_id: &str, n_seeds: usize, base_seed: u64, workers: usize, run: F) -> Result<ScoreSummary>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    if n_seeds == 0 {
        return Err(Error::Domain("n_seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| base_seed + i).collect();
    let outcomes = run_parallel(workers, &seeds, |&s| run(s))?;
    let mut ok_seeds = Vec::new();
    let mut scores = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (seed, outcome) in seeds.into_iter().zip(outcomes) {
        match outcome {
            Ok(s) if s.is_finite() => {
                ok_seeds.push(seed);
                scores.push(s);
            }
            Ok(s) => {
                log::warn!("{model_id}: seed {seed} produced non-finite score {s}");
                failed.push(seed);
                first_error.get_or_insert_with(|| Error::Numeric(format!("seed {seed} scored {s}")));
            }
            Err(e) => {
                log::warn!("{model_id}: seed {seed} failed: {e}");
                failed.push(seed);
                first_error.get_or_insert(e);
            }
        }
    }
    if scores.is_empty() {
        return Err(first_error.expect("at least one seed ran"));
    }
    let mut summary = ScoreSummary::from_scores(model_id, ok_seeds, scores)?;
    summary.failed_seeds = failed;
    Ok(summary)
}

/// Maps `f` over `items` on a pool of `workers` threads (1 runs inline);
/// results keep the input order.
pub fn run_parallel<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let probs = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.2, 0.8]);
        assert_eq!(score(&probs, &Targets::Class(vec![0, 1])).unwrap(), 1.0);
        let y = Tensor::matrix(2, 1, vec![1.0, 2.0]);
        assert_eq!(score(&y, &Targets::Real(vec![1.0, 2.0])).unwrap(), 0.0);
        let s = score(&Tensor::matrix(2, 1, vec![3.0, 4.0]), &Targets::Real(vec![0.0, 0.0])).unwrap();
        assert!((s + 12.5f64.sqrt()).abs() < 1e-15);
        assert!(score(&Tensor::zeros(&[0, 1]), &Targets::Real(vec![])).is_err());
    }

    #[test]
    fn population_std() {
        let s = ScoreSummary::from_scores("m", vec![0, 1, 2], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let one = ScoreSummary::from_scores("m", vec![0], vec![0.7]).unwrap();
        assert_eq!(one.std, 0.0);
    }

    #[test]
    fn failed_seeds_are_excluded() {
        let s = aggregate_seeds("m", 4, 10, 2, |seed| {
            if seed == 11 {
                Err(Error::Numeric("diverged".into()))
            } else {
                Ok(seed as f64)
            }
        })
        .unwrap();
        assert_eq!(s.seeds, vec![10, 12, 13]);
        assert_eq!(s.failed_seeds, vec![11]);
        assert!(aggregate_seeds("m", 2, 0, 1, |_| Err(Error::Numeric("x".into()))).is_err());
    }
}
