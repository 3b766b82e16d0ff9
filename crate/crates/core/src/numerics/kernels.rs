//! Softmax, Gumbel noise and entropy kernels shared by the gates and heads.

use crate::error::{Error, Result};

use super::rng::Rng;
use super::tensor::Tensor;

/// Guard keeping uniform draws inside the open interval before the double log.
pub const UNIFORM_GUARD: f64 = 1.0 / (1u64 << 53) as f64;

/// Probability vector over `K` outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    /// Checks the simplex invariants (entries in `[0, 1]`, sum within `1e-12`).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("empty probability vector".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Domain(format!("probability outside [0, 1]: {weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("probabilities sum to {s}")));
        }
        Ok(ProbVec(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// In-place stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> ProbVec {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    ProbVec(out)
}

/// Row-wise softmax over the trailing axis.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

/// Maps a uniform draw to a standard Gumbel variate, `-ln(-ln u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_GUARD, 1.0 - UNIFORM_GUARD);
    -(-u.ln()).ln()
}

/// `n` i.i.d. Gumbel(0, 1) draws.
pub fn sample_gumbel(rng: &mut Rng, n: usize) -> Tensor {
    let data = (0..n).map(|_| gumbel_from_uniform(rng.uniform())).collect();
    Tensor::vector(data)
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be positive and finite, got {tau}")))
    }
}

/// `softmax((logits + noise) / tau)` for an explicit noise vector.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> Result<ProbVec> {
    check_tau(tau)?;
    if logits.len() != noise.len() {
        return Err(Error::dim("gumbel_softmax", &[logits.len()], &[noise.len()]));
    }
    let mut z: Vec<f64> = logits.iter().zip(noise).map(|(l, s)| (l + s) / tau).collect();
    softmax_in_place(&mut z);
    Ok(ProbVec(z))
}

/// One Gumbel-softmax sample with fresh noise from `rng`.
pub fn gumbel_softmax(logits: &[f64], tau: f64, rng: &mut Rng) -> Result<ProbVec> {
    check_tau(tau)?;
    let noise = sample_gumbel(rng, logits.len());
    gumbel_softmax_with_noise(logits, noise.data(), tau)
}

/// Shannon entropy in nats with `0·ln 0 = 0`, clamped to `[0, ln K]`.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    h.clamp(0.0, (p.len() as f64).ln())
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for w in p.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[LN2, 0.0, 0.0]);
        let want = [0.5, 0.25, 0.25];
        for (a, b) in p.weights().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for c in [-50.0, 0.0, 3.7, 1e3] {
            let p = softmax(&[c, c + 3f64.ln()]);
            assert!((p.weights()[0] - 0.25).abs() < 1e-12);
            assert!((p.weights()[1] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logits_stay_on_simplex() {
        let p = softmax(&[1e3, -1e3, 999.0]);
        assert!(ProbVec::new(p.weights().to_vec()).is_ok());
    }

    #[test]
    fn gumbel_transform_points() {
        assert!(gumbel_from_uniform((-1f64).exp()).abs() < 1e-15);
        let u = (-std::f64::consts::E).exp();
        assert!((gumbel_from_uniform(u) + 1.0).abs() < 1e-12);
        // guard keeps the extremes finite
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_gamma() {
        let mut rng = Rng::new(42);
        let n = 1_000_000;
        let draws = sample_gumbel(&mut rng, n);
        let mean = draws.sum() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gumbel_softmax_zero_noise_is_softmax() {
        let logits = [0.3, -1.2, 2.0];
        let g = gumbel_softmax_with_noise(&logits, &[0.0; 3], 1.0).unwrap();
        assert_eq!(g, softmax(&logits));
    }

    #[test]
    fn gumbel_softmax_rejects_bad_tau() {
        let mut rng = Rng::new(0);
        assert!(gumbel_softmax(&[0.0, 1.0], 0.0, &mut rng).is_err());
        assert!(gumbel_softmax(&[0.0, 1.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn gumbel_softmax_is_reproducible() {
        let logits = [0.1, 0.2, -0.4, 1.0];
        let a = gumbel_softmax(&logits, 0.7, &mut Rng::with_stream(3, 9)).unwrap();
        let b = gumbel_softmax(&logits, 0.7, &mut Rng::with_stream(3, 9)).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.5 * LN2).abs() < 1e-12);
    }

    #[test]
    fn probvec_validation() {
        assert!(ProbVec::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVec::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVec::new(vec![1.5, -0.5]).is_err());
    }
}
