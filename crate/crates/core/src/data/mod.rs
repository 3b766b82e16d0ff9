//! Tabular datasets: column schema, CSV + manifest ingestion, deterministic
//! splits and synthetic generators.

mod manifest;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub use manifest::{load, write_bundle, FileSet, Manifest, SplitSpec};
pub use synth::{bayes_score, synth, SynthKind, SynthSpec};

/// Ratios used when a dataset arrives as one file.
pub const DEFAULT_SPLIT: [f64; 3] = [0.64, 0.16, 0.20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binclass,
    Multiclass { n_classes: usize },
}

impl Task {
    /// Width of the model head: 1 for regression, `C` otherwise.
    pub fn output_dim(self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Binclass => 2,
            Task::Multiclass { n_classes } => n_classes,
        }
    }

    pub fn n_classes(self) -> Option<usize> {
        match self {
            Task::Regression => None,
            other => Some(other.output_dim()),
        }
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Task::Regression)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub task: Task,
    /// All columns in file order, including exactly one target.
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let targets = self.columns.iter().filter(|c| c.kind == ColumnKind::Target).count();
        if targets != 1 {
            return Err(Error::Schema(format!("expected exactly one target column, found {targets}")));
        }
        if let Task::Multiclass { n_classes } = self.task {
            if n_classes < 2 {
                return Err(Error::Schema(format!("multiclass needs at least 2 classes, got {n_classes}")));
            }
        }
        let mut names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("duplicate column name {:?}", w[0])));
        }
        if self.features().next().is_none() {
            return Err(Error::Schema("no feature columns".into()));
        }
        Ok(())
    }

    /// Feature columns in file order.
    pub fn features(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Target)
    }

    pub fn target(&self) -> &ColumnSchema {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Target)
            .expect("validated schema has a target")
    }

    /// Raw feature width before encoding.
    pub fn raw_width(&self) -> usize {
        self.features().count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Categorical and binary columns keep their raw tokens.
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Rows of one split, stored column-wise. `columns` follows
/// [`Schema::features`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<ColumnData>,
    pub targets: Targets,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn gather(&self, idx: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.gather(idx)).collect(),
            targets: self.targets.gather(idx),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: String,
    pub schema: Schema,
    pub train: Table,
    pub val: Table,
    pub test: Table,
}

impl DatasetBundle {
    pub fn task(&self) -> Task {
        self.schema.task
    }

    pub fn raw_width(&self) -> usize {
        self.schema.raw_width()
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.n_rows(), self.val.n_rows(), self.test.n_rows()]
    }

    /// Splits a single table by a seeded permutation.
    pub fn from_single(name: String, schema: Schema, all: Table, ratios: [f64; 3], seed: u64) -> Result<Self> {
        let [train, val, test] = split_indices(all.n_rows(), ratios, seed)?;
        Ok(DatasetBundle {
            name,
            schema,
            train: all.gather(&train),
            val: all.gather(&val),
            test: all.gather(&test),
        })
    }
}

/// Train/val/test row indices for `n` rows. Sizes are `round(r·n)` for train
/// and val with the remainder in test; each list is sorted.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Schema(format!("split ratios must be in [0, 1] and sum to 1, got {ratios:?}")));
    }
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Schema(format!("split {ratios:?} of {n} rows leaves an empty split")));
    }
    let perm = Rng::new(seed).fork(0x5117).permutation(n);
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}
