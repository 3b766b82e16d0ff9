use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repetitions of an inference timing measurement.
pub const INFERENCE_REPETITIONS: usize = 15;

/// Sample statistics (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

/// Wall-clock [`Stats`] in milliseconds.
pub type TimingStats = Stats;

/// Runs `body` `repetitions` times, timing each run on the monotonic clock.
/// The last run's value is returned alongside the statistics.
pub fn time_run<T, F>(repetitions: usize, mut body: F) -> Result<(TimingStats, T)>
where
    F: FnMut() -> Result<T>,
{
    if repetitions == 0 {
        return Err(Error::Domain("repetitions must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(repetitions);
    let mut last = None;
    for _ in 0..repetitions {
        let start = Instant::now();
        let value = body()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(value);
    }
    Ok((summarize(&samples), last.expect("repetitions >= 1")))
}

/// Statistics of a non-empty sample.
pub fn summarize(samples: &[f64]) -> Stats {
    assert!(!samples.is_empty(), "statistics need at least one sample");
    let (mean, std) = super::mean_std(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Stats {
        n,
        mean,
        std,
        min: sorted[0],
        max: sorted[n - 1],
        median,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noop_timing() {
        let (stats, ()) = time_run(INFERENCE_REPETITIONS, || Ok(())).unwrap();
        assert_eq!(stats.n, 15);
        assert!(stats.mean < 1.0);
        assert!(stats.min <= stats.mean && stats.mean <= stats.max);
    }

    #[test]
    fn median_of_even_count() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }
}
