use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnKind, ColumnSchema, DatasetBundle, Schema, Table, Targets, Task, DEFAULT_SPLIT};
use crate::error::{Error, Result};

/// On-disk dataset description. File paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub task: TaskName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    pub columns: Vec<ColumnSchema>,
    pub files: FileSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Regression,
    Binclass,
    Multiclass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FileSet {
    Single { single: PathBuf },
    Split { train: PathBuf, val: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Manifest {
    pub fn schema(&self) -> Result<Schema> {
        let task = match (self.task, self.n_classes) {
            (TaskName::Regression, None) => Task::Regression,
            (TaskName::Binclass, None | Some(2)) => Task::Binclass,
            (TaskName::Multiclass, Some(c)) => Task::Multiclass { n_classes: c },
            (TaskName::Multiclass, None) => {
                return Err(Error::Schema("multiclass task requires n_classes".into()));
            }
            (t, Some(c)) => {
                return Err(Error::Schema(format!("n_classes = {c} is not valid for task {t:?}")));
            }
        };
        let schema = Schema {
            task,
            columns: self.columns.clone(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// Loads a dataset described by the manifest at `manifest_path`.
pub fn load(manifest_path: &Path) -> Result<DatasetBundle> {
    let manifest = Manifest::from_path(manifest_path)?;
    let schema = manifest.schema()?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    match &manifest.files {
        FileSet::Single { single } => {
            if manifest.split.is_none() {
                log::info!("{}: no split given, using default ratios {DEFAULT_SPLIT:?}", manifest.name);
            }
            let split = manifest.split.clone().unwrap_or(SplitSpec {
                ratios: DEFAULT_SPLIT,
                seed: 0,
            });
            let all = read_csv(&base.join(single), &schema)?;
            DatasetBundle::from_single(manifest.name.clone(), schema, all, split.ratios, split.seed)
        }
        FileSet::Split { train, val, test } => {
            if manifest.split.is_some() {
                return Err(Error::Schema("split ratios given for a pre-split dataset".into()));
            }
            Ok(DatasetBundle {
                name: manifest.name.clone(),
                train: read_csv(&base.join(train), &schema)?,
                val: read_csv(&base.join(val), &schema)?,
                test: read_csv(&base.join(test), &schema)?,
                schema,
            })
        }
    }
}

fn read_csv(path: &Path, schema: &Schema) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema(format!("{}: {other:?}", path.display())),
        })?;
    let header = reader.headers()?.clone();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    if position.len() != header.len() {
        return Err(Error::Schema(format!("{}: duplicate header names", path.display())));
    }
    for h in header.iter() {
        if !schema.columns.iter().any(|c| c.name == h) {
            return Err(Error::Schema(format!("{}: unknown column {h:?}", path.display())));
        }
    }
    let mut index = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let i = position
            .get(c.name.as_str())
            .ok_or_else(|| Error::Schema(format!("{}: missing column {:?}", path.display(), c.name)))?;
        index.push(*i);
    }

    let features: Vec<&ColumnSchema> = schema.features().collect();
    let mut columns: Vec<ColumnData> = features
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            _ => ColumnData::Text(Vec::new()),
        })
        .collect();
    let n_classes = schema.task.n_classes();
    let mut real_targets = Vec::new();
    let mut class_targets = Vec::new();

    let row_err = |line: u64, msg: String| Error::Row {
        path: path.to_path_buf(),
        line,
        msg,
    };

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut feature = 0;
        for (c, &i) in schema.columns.iter().zip(&index) {
            let raw = record.get(i).unwrap_or("").trim();
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(row_err(line, format!("missing value in column {:?}", c.name)));
            }
            match c.kind {
                ColumnKind::Target => match n_classes {
                    None => real_targets.push(parse_real(raw).map_err(|m| row_err(line, m))?),
                    Some(k) => {
                        let label = parse_class(raw).map_err(|m| row_err(line, m))?;
                        if label >= k {
                            return Err(Error::Schema(format!(
                                "{}:{line}: target class {label} outside declared {k} classes",
                                path.display()
                            )));
                        }
                        class_targets.push(label);
                    }
                },
                _ => {
                    match &mut columns[feature] {
                        ColumnData::Numeric(v) => v.push(parse_real(raw).map_err(|m| row_err(line, m))?),
                        ColumnData::Text(v) => v.push(raw.to_string()),
                    }
                    feature += 1;
                }
            }
        }
    }
    let targets = match n_classes {
        None => Targets::Real(real_targets),
        Some(_) => Targets::Class(class_targets),
    };
    if targets.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    Ok(Table { columns, targets })
}

fn parse_real(raw: &str) -> std::result::Result<f64, String> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("not a finite number: {raw:?}")),
    }
}

fn parse_class(raw: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = raw.parse::<usize>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 => Ok(v as usize),
        _ => Err(format!("not a class index: {raw:?}")),
    }
}

/// Writes a bundle as three CSV files plus a pre-split manifest in `dir`.
/// Returns the manifest path.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, table) in [("train", &bundle.train), ("val", &bundle.val), ("test", &bundle.test)] {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(bundle.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..table.n_rows() {
            let mut feature = 0;
            let mut record = Vec::with_capacity(bundle.schema.columns.len());
            for c in &bundle.schema.columns {
                if c.kind == ColumnKind::Target {
                    record.push(match &table.targets {
                        Targets::Real(v) => format_real(v[r]),
                        Targets::Class(v) => v[r].to_string(),
                    });
                } else {
                    record.push(match &table.columns[feature] {
                        ColumnData::Numeric(v) => format_real(v[r]),
                        ColumnData::Text(v) => v[r].clone(),
                    });
                    feature += 1;
                }
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let (task, n_classes) = match bundle.schema.task {
        Task::Regression => (TaskName::Regression, None),
        Task::Binclass => (TaskName::Binclass, None),
        Task::Multiclass { n_classes } => (TaskName::Multiclass, Some(n_classes)),
    };
    let manifest = Manifest {
        name: bundle.name.clone(),
        task,
        n_classes,
        columns: bundle.schema.columns.clone(),
        files: FileSet::Split {
            train: "train.csv".into(),
            val: "val.csv".into(),
            test: "test.csv".into(),
        },
        split: None,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Shortest representation that parses back to the same `f64`.
fn format_real(v: f64) -> String {
    format!("{v:?}")
}
