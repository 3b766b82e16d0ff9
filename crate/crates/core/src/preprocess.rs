//! Feature transforms fitted on the training split only.
//!
//! * binary columns map to `{0, 1}`;
//! * categorical columns are one-hot encoded over the training vocabulary
//!   plus one trailing slot for values never seen in training;
//! * numeric columns are quantile-normalized towards a standard normal, and,
//!   when an embedding is requested, also encoded piecewise-linearly over
//!   quantile bins of the raw values.
//!
//! Regression targets are standardized with the training mean and standard
//! deviation; predictions are mapped back before scoring.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ColumnData, ColumnKind, DatasetBundle, Schema, Table, Targets, Task};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Upper bound on the number of reference quantiles.
pub const MAX_QUANTILES: usize = 1000;
/// Clamp applied to the interpolated CDF before the inverse normal.
pub const CDF_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericState {
    /// Constant on the training split; every transform yields 0.
    pub degenerate: bool,
    /// Distinct reference quantile values, strictly increasing.
    pub references: Vec<f64>,
    /// CDF level of each reference (mean level over tied quantiles).
    pub levels: Vec<f64>,
    /// Piecewise-linear bin edges, strictly increasing. Present only when
    /// fitted with a bin count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnState {
    Numeric(NumericState),
    /// Token that maps to 1; everything else maps to 0.
    Binary { positive: String },
    /// Ordered training vocabulary; the unknown slot follows it.
    Categorical { vocab: Vec<String> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn scale(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub task: Task,
    /// One state per feature column, in schema feature order.
    pub columns: Vec<ColumnState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetScaler>,
}

/// Encoded split, ready for a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    /// Quantile-normalized numeric features `[n × n_numeric]`.
    pub numeric: Tensor,
    /// Binary and one-hot features `[n × n_other]`.
    pub other: Tensor,
    /// Piecewise-linear encodings `[n × n_numeric·T]`, feature-major.
    pub ple: Option<Tensor>,
    /// Targets in model space (standardized for regression).
    pub targets: Targets,
    /// Raw targets, for scoring.
    pub raw_targets: Targets,
}

impl Encoded {
    /// Wraps already-encoded numeric features (no binary/one-hot block).
    pub fn from_numeric(numeric: Tensor, targets: Targets) -> Encoded {
        let other = Tensor::zeros(&[numeric.rows(), 0]);
        Encoded {
            numeric,
            other,
            ple: None,
            raw_targets: targets.clone(),
            targets,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    /// `[numeric, other]` for models without an embedding.
    pub fn dense(&self) -> Tensor {
        Tensor::concat_cols(&[&self.numeric, &self.other]).expect("row counts agree")
    }

    pub fn gather(&self, idx: &[usize]) -> Encoded {
        Encoded {
            numeric: self.numeric.gather_rows(idx),
            other: self.other.gather_rows(idx),
            ple: self.ple.as_ref().map(|p| p.gather_rows(idx)),
            targets: self.targets.gather(idx),
            raw_targets: self.raw_targets.gather(idx),
        }
    }
}

/// A bundle encoded by a preprocessor fitted on its training split.
#[derive(Clone, Debug)]
pub struct EncodedBundle {
    pub preprocessor: Preprocessor,
    pub train: Encoded,
    pub val: Encoded,
    pub test: Encoded,
}

impl EncodedBundle {
    pub fn new(bundle: &DatasetBundle, n_bins: Option<usize>) -> Result<Self> {
        let preprocessor = Preprocessor::fit_bundle(bundle, n_bins)?;
        Ok(EncodedBundle {
            train: preprocessor.transform(&bundle.train)?,
            val: preprocessor.transform(&bundle.val)?,
            test: preprocessor.transform(&bundle.test)?,
            preprocessor,
        })
    }
}

impl Preprocessor {
    /// Fits on `train`. `n_bins` enables piecewise-linear encoding.
    pub fn fit(train: &Table, schema: &Schema, n_bins: Option<usize>) -> Result<Preprocessor> {
        let n = train.n_rows();
        if n < 2 {
            return Err(Error::Domain(format!("preprocessing needs at least 2 training rows, got {n}")));
        }
        if let Some(t) = n_bins {
            if t < 2 {
                return Err(Error::Domain(format!("piecewise-linear encoding needs at least 2 bins, got {t}")));
            }
        }
        let kinds: Vec<ColumnKind> = schema.features().map(|c| c.kind).collect();
        if kinds.len() != train.columns.len() {
            return Err(Error::dim("preprocess::fit", &[kinds.len()], &[train.columns.len()]));
        }
        let mut columns = Vec::with_capacity(kinds.len());
        for (kind, col) in kinds.iter().zip(&train.columns) {
            let state = match (kind, col) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => ColumnState::Numeric(fit_numeric(v, n_bins)),
                (ColumnKind::Binary, ColumnData::Text(v)) => ColumnState::Binary {
                    positive: fit_binary(v)?,
                },
                (ColumnKind::Categorical, ColumnData::Text(v)) => {
                    let mut vocab = v.clone();
                    vocab.sort();
                    vocab.dedup();
                    ColumnState::Categorical { vocab }
                }
                (k, _) => return Err(Error::Schema(format!("column data does not match kind {k:?}"))),
            };
            columns.push(state);
        }
        let target = match &train.targets {
            Targets::Real(y) => {
                let mean = y.iter().sum::<f64>() / n as f64;
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                Some(TargetScaler { mean, std })
            }
            Targets::Class(_) => None,
        };
        Ok(Preprocessor {
            task: schema.task,
            columns,
            n_bins,
            target,
        })
    }

    /// Fits on the bundle's training split; validation and test rows are
    /// never read.
    pub fn fit_bundle(bundle: &DatasetBundle, n_bins: Option<usize>) -> Result<Preprocessor> {
        Preprocessor::fit(&bundle.train, &bundle.schema, n_bins)
    }

    pub fn n_numeric(&self) -> usize {
        self.columns.iter().filter(|c| matches!(c, ColumnState::Numeric(_))).count()
    }

    /// Width of binary plus one-hot features.
    pub fn n_other(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnState::Numeric(_) => 0,
                ColumnState::Binary { .. } => 1,
                ColumnState::Categorical { vocab } => vocab.len() + 1,
            })
            .sum()
    }

    /// Encoded width without embedding.
    pub fn dense_width(&self) -> usize {
        self.n_numeric() + self.n_other()
    }

    pub fn transform(&self, table: &Table) -> Result<Encoded> {
        if table.columns.len() != self.columns.len() {
            return Err(Error::dim("preprocess::transform", &[self.columns.len()], &[table.columns.len()]));
        }
        let n = table.n_rows();
        let (n_num, n_other) = (self.n_numeric(), self.n_other());
        let bins = self.n_bins.unwrap_or(0);
        let mut numeric = Tensor::zeros(&[n, n_num]);
        let mut other = Tensor::zeros(&[n, n_other]);
        let mut ple = self.n_bins.map(|t| Tensor::zeros(&[n, n_num * t]));

        let (mut j_num, mut j_other) = (0, 0);
        for (state, col) in self.columns.iter().zip(&table.columns) {
            match (state, col) {
                (ColumnState::Numeric(s), ColumnData::Numeric(v)) => {
                    for (r, &x) in v.iter().enumerate() {
                        numeric.data_mut()[r * n_num + j_num] = s.quantile(x);
                        if let Some(p) = ple.as_mut() {
                            let width = n_num * bins;
                            let start = r * width + j_num * bins;
                            s.encode_ple_into(x, bins, &mut p.data_mut()[start..start + bins]);
                        }
                    }
                    j_num += 1;
                }
                (ColumnState::Binary { positive }, ColumnData::Text(v)) => {
                    for (r, x) in v.iter().enumerate() {
                        other.data_mut()[r * n_other + j_other] = f64::from(u8::from(x == positive));
                    }
                    j_other += 1;
                }
                (ColumnState::Categorical { vocab }, ColumnData::Text(v)) => {
                    for (r, x) in v.iter().enumerate() {
                        let slot = one_hot_slot(vocab, x);
                        other.data_mut()[r * n_other + j_other + slot] = 1.0;
                    }
                    j_other += vocab.len() + 1;
                }
                _ => return Err(Error::Schema("column data does not match fitted kind".into())),
            }
        }
        let targets = match (&table.targets, &self.target) {
            (Targets::Real(y), Some(t)) => Targets::Real(y.iter().map(|&v| t.scale(v)).collect()),
            (Targets::Class(c), None) => Targets::Class(c.clone()),
            _ => return Err(Error::Schema("target type does not match fitted task".into())),
        };
        Ok(Encoded {
            numeric,
            other,
            ple,
            targets,
            raw_targets: table.targets.clone(),
        })
    }

    /// One-hot (or `{0, 1}` for binary) encoding of a single token for the
    /// feature column at `column`.
    pub fn transform_onehot(&self, column: usize, value: &str) -> Result<Vec<f64>> {
        match self.columns.get(column) {
            Some(ColumnState::Binary { positive }) => Ok(vec![f64::from(u8::from(value == positive))]),
            Some(ColumnState::Categorical { vocab }) => {
                let mut v = vec![0.0; vocab.len() + 1];
                v[one_hot_slot(vocab, value)] = 1.0;
                Ok(v)
            }
            _ => Err(Error::Domain(format!("column {column} is not binary or categorical"))),
        }
    }

    pub fn numeric_state(&self, column: usize) -> Option<&NumericState> {
        match self.columns.get(column) {
            Some(ColumnState::Numeric(s)) => Some(s),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_canonical_string(self)
    }

    pub fn from_json(text: &str) -> Result<Preprocessor> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Preprocessor> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Preprocessor::from_json(&text)
    }
}

fn one_hot_slot(vocab: &[String], value: &str) -> usize {
    vocab
        .binary_search_by(|v| v.as_str().cmp(value))
        .unwrap_or(vocab.len())
}

const TRUE_TOKENS: [&str; 4] = ["1", "true", "yes", "t"];

fn fit_binary(values: &[String]) -> Result<String> {
    let mut distinct: Vec<&String> = values.iter().collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() > 2 {
        return Err(Error::Schema(format!(
            "binary column has {} distinct values: {:?}",
            distinct.len(),
            &distinct[..3]
        )));
    }
    if let Some(t) = distinct.iter().find(|v| TRUE_TOKENS.contains(&v.to_ascii_lowercase().as_str())) {
        return Ok((*t).clone());
    }
    if distinct.len() == 1 && ["0", "false", "no", "f"].contains(&distinct[0].to_ascii_lowercase().as_str()) {
        return Ok("1".into());
    }
    Ok(distinct.last().map(|s| (*s).clone()).unwrap_or_default())
}

/// Empirical quantile with linear interpolation between order statistics.
fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn fit_numeric(values: &[f64], n_bins: Option<usize>) -> NumericState {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = MAX_QUANTILES.min(sorted.len());

    let mut references: Vec<f64> = Vec::with_capacity(q);
    let mut levels: Vec<f64> = Vec::with_capacity(q);
    let mut group = 0usize;
    for i in 0..q {
        let level = i as f64 / (q - 1) as f64;
        let v = empirical_quantile(&sorted, level);
        match references.last() {
            Some(&last) if v <= last => {
                // tied quantile: average the levels of the group
                group += 1;
                let l = levels.last_mut().expect("non-empty");
                *l += (level - *l) / group as f64;
            }
            _ => {
                references.push(v);
                levels.push(level);
                group = 1;
            }
        }
    }
    let degenerate = references.len() < 2;
    let edges = n_bins.map(|t| {
        let mut e: Vec<f64> = (0..=t).map(|i| empirical_quantile(&sorted, i as f64 / t as f64)).collect();
        e.dedup_by(|a, b| *a <= *b);
        e
    });
    NumericState {
        degenerate,
        references,
        levels,
        edges,
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

impl NumericState {
    /// Interpolated empirical CDF, not yet clamped.
    pub fn cdf(&self, x: f64) -> f64 {
        let r = &self.references;
        if x < r[0] {
            return 0.0;
        }
        if x > r[r.len() - 1] {
            return 1.0;
        }
        let i = r.partition_point(|&v| v <= x);
        if i == 0 {
            return self.levels[0];
        }
        if i == r.len() || r[i - 1] == x {
            return self.levels[i - 1];
        }
        let t = (x - r[i - 1]) / (r[i] - r[i - 1]);
        self.levels[i - 1] + t * (self.levels[i] - self.levels[i - 1])
    }

    /// Quantile normalization: clamped CDF mapped through `Φ⁻¹`.
    pub fn quantile(&self, x: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let p = self.cdf(x).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
        standard_normal().inverse_cdf(p)
    }

    /// Piecewise-linear encoding of `x` over the fitted bins.
    pub fn encode_ple(&self, x: f64) -> Result<Vec<f64>> {
        let bins = self
            .edges
            .as_ref()
            .map(|e| e.len().saturating_sub(1))
            .ok_or_else(|| Error::Domain("column was fitted without bins".into()))?;
        let mut out = vec![0.0; bins.max(1)];
        self.encode_ple_into(x, out.len(), &mut out);
        Ok(out)
    }

    /// Writes a `width`-component encoding. Components past the last fitted
    /// bin (lost to edge de-duplication) act as zero-width bins at the top
    /// edge.
    pub(crate) fn encode_ple_into(&self, x: f64, width: usize, out: &mut [f64]) {
        let edges = self.edges.as_deref().unwrap_or(&[]);
        if self.degenerate || edges.is_empty() {
            out.fill(0.0);
            return;
        }
        let top = edges[edges.len() - 1];
        for (t, o) in out.iter_mut().enumerate().take(width) {
            *o = if t + 1 < edges.len() {
                let (lo, hi) = (edges[t], edges[t + 1]);
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else if x >= top {
                1.0
            } else {
                0.0
            };
        }
    }
}
