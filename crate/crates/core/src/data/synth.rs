//! Synthetic datasets with known optimal scores.
//!
//! * `Linear`: `x ~ N(0, I_M)`, `y = xᵀβ + σ·ε` with `β` drawn from the seed
//!   and scaled to unit norm. The best achievable RMSE is `σ`.
//! * `Blobs`: `x = σ·(c_y + z)` with balanced labels and class centres at
//!   pairwise distance `separation` (in units of `σ`). With two classes the
//!   Bayes accuracy is `Φ(separation / 2)`.
//! * `Xor`: `u ~ U[-1, 1]^M`, label `[u₀ > 0] ≠ [u₁ > 0]`, observed
//!   `x = u + σ·z`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ColumnData, ColumnKind, ColumnSchema, DatasetBundle, Schema, Table, Targets, Task, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Linear,
    Blobs { classes: usize, separation: f64 },
    Xor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub n_features: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn synth(spec: &SynthSpec) -> Result<DatasetBundle> {
    let SynthSpec {
        kind,
        n,
        n_features: m,
        noise,
        seed,
    } = *spec;
    if n < 30 {
        return Err(Error::Domain(format!("synthetic datasets need at least 30 rows, got {n}")));
    }
    if m == 0 || !(noise >= 0.0) {
        return Err(Error::Domain("need at least one feature and non-negative noise".into()));
    }
    let mut rng = Rng::new(seed).fork(0x5a47);
    let mut x = vec![vec![0.0; n]; m];

    let (task, targets, name) = match kind {
        SynthKind::Linear => {
            let mut beta: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            beta.iter_mut().for_each(|b| *b /= norm);
            let mut y = Vec::with_capacity(n);
            for r in 0..n {
                let mut acc = 0.0;
                for (j, col) in x.iter_mut().enumerate() {
                    col[r] = rng.normal();
                    acc += col[r] * beta[j];
                }
                y.push(acc + noise * rng.normal());
            }
            (Task::Regression, Targets::Real(y), "synth-linear")
        }
        SynthKind::Blobs { classes, separation } => {
            if classes < 2 || (classes > 2 && classes > m) {
                return Err(Error::Domain(format!(
                    "blobs with {classes} classes need classes >= 2 and at most {m} classes"
                )));
            }
            let centres = blob_centres(classes, separation, m, &mut rng);
            let mut y = Vec::with_capacity(n);
            for r in 0..n {
                let label = rng.below(classes);
                for (j, col) in x.iter_mut().enumerate() {
                    col[r] = noise * (centres[label][j] + rng.normal());
                }
                y.push(label);
            }
            let task = if classes == 2 {
                Task::Binclass
            } else {
                Task::Multiclass { n_classes: classes }
            };
            (task, Targets::Class(y), "synth-blobs")
        }
        SynthKind::Xor => {
            if m < 2 {
                return Err(Error::Domain("xor needs at least two features".into()));
            }
            let mut y = Vec::with_capacity(n);
            for r in 0..n {
                let u: Vec<f64> = (0..m).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                y.push(usize::from((u[0] > 0.0) != (u[1] > 0.0)));
                for (j, col) in x.iter_mut().enumerate() {
                    col[r] = u[j] + noise * rng.normal();
                }
            }
            (Task::Binclass, Targets::Class(y), "synth-xor")
        }
    };

    let mut columns: Vec<ColumnSchema> = (0..m)
        .map(|j| ColumnSchema {
            name: format!("x{j}"),
            kind: ColumnKind::Numeric,
        })
        .collect();
    columns.push(ColumnSchema {
        name: "y".into(),
        kind: ColumnKind::Target,
    });
    let schema = Schema { task, columns };
    let all = Table {
        columns: x.into_iter().map(ColumnData::Numeric).collect(),
        targets,
    };
    DatasetBundle::from_single(name.into(), schema, all, DEFAULT_SPLIT, seed)
}

fn blob_centres(classes: usize, separation: f64, m: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    if classes == 2 {
        let mut u: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v *= 0.5 * separation / norm);
        let neg = u.iter().map(|v| -v).collect();
        return vec![neg, u];
    }
    // scaled basis vectors: pairwise distance is `separation`
    let s = separation / std::f64::consts::SQRT_2;
    (0..classes)
        .map(|k| (0..m).map(|j| if j == k { s } else { 0.0 }).collect())
        .collect()
}

/// Best achievable score (higher is better) where it has a closed form:
/// `-σ` for linear regression, `Φ(separation / 2)` for two-class blobs.
pub fn bayes_score(spec: &SynthSpec) -> Option<f64> {
    match spec.kind {
        SynthKind::Linear => Some(-spec.noise),
        SynthKind::Blobs { classes: 2, separation } => {
            Some(Normal::new(0.0, 1.0).ok()?.cdf(separation / 2.0))
        }
        _ => None,
    }
}
