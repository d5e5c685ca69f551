//! Records, labeled pairs, datasets and the on-disk benchmark layouts.
//!
//! Two directory layouts are understood:
//!
//! * benchmark layout: `tableA.csv`, `tableB.csv` sharing a header whose first
//!   column is `id`, plus `train.csv` / `valid.csv` / `test.csv` with columns
//!   `ltable_id,rtable_id,label`;
//! * pairs layout: a single `pairs.csv` with `left_<attr>…,right_<attr>…,label`
//!   columns (an optional leading `id` column is ignored), split 3:1:1 under a
//!   seed.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEFT_PREFIX: &str = "left_";
pub const RIGHT_PREFIX: &str = "right_";

/// Ordered attribute names shared by every record of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    attributes: Vec<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(attributes: impl IntoIterator<Item = S>) -> Result<Self> {
        let attributes: Vec<String> = attributes.into_iter().map(Into::into).collect();
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("no attributes".into()));
        }
        for (i, name) in attributes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidSchema(format!("attribute {i} has an empty name")));
            }
            if attributes[..i].contains(name) {
                return Err(Error::InvalidSchema(format!("duplicate attribute {name:?}")));
            }
        }
        Ok(Schema { attributes })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.attributes.join(", "))
    }
}

/// One attribute value per schema attribute; absent values are empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub values: Vec<String>,
}

impl Record {
    pub fn new<S: Into<String>>(values: impl IntoIterator<Item = S>) -> Self {
        Record {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn conforms_to(&self, schema: &Schema) -> bool {
        self.values.len() == schema.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub left: Record,
    pub right: Record,
    /// `true` when both records describe the same entity.
    pub label: bool,
}

impl LabeledPair {
    pub fn new(left: Record, right: Record, label: bool) -> Self {
        LabeledPair { left, right, label }
    }

    pub fn swapped(&self) -> Self {
        LabeledPair {
            left: self.right.clone(),
            right: self.left.clone(),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, valid or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: Schema,
    pub train: Vec<LabeledPair>,
    pub valid: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[LabeledPair] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = &LabeledPair> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Deterministically shuffles `pairs` under `seed` and cuts them into
/// train / valid / test by `ratios`.
///
/// Valid and test sizes are floored; the remainder goes to train, so
/// 7 pairs at 3:1:1 give (5, 1, 1).
pub fn split_pairs<T: Clone>(pairs: &[T], ratios: [f64; 3], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    if pairs.is_empty() {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let total: f64 = ratios.iter().sum();
    assert!(
        ratios.iter().all(|r| *r > 0.0 && r.is_finite()),
        "split ratios must be positive and finite"
    );
    let n = pairs.len();
    let n_valid = ((n as f64) * ratios[1] / total).floor() as usize;
    let n_test = ((n as f64) * ratios[2] / total).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    (
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_valid]),
        take(&order[n_train + n_valid..]),
    )
}

/// Loads a dataset directory in either the benchmark layout or the pairs
/// layout. `split_seed` is only used by the pairs layout.
pub fn load_dataset(dir: &Path, split_seed: u64) -> Result<Dataset> {
    if dir.join("tableA.csv").exists() || !dir.join("pairs.csv").exists() {
        load_benchmark_dataset(dir)
    } else {
        let (schema, pairs) = read_pairs_csv(&dir.join("pairs.csv"))?;
        let (train, valid, test) = split_pairs(&pairs, [3.0, 1.0, 1.0], split_seed);
        Ok(Dataset {
            name: dataset_name(dir),
            schema,
            train,
            valid,
            test,
        })
    }
}

/// Loads the `tableA` / `tableB` / `train` / `valid` / `test` layout.
pub fn load_benchmark_dataset(dir: &Path) -> Result<Dataset> {
    let (header_a, table_a) = read_table(&dir.join("tableA.csv"))?;
    let (header_b, table_b) = read_table(&dir.join("tableB.csv"))?;
    if header_a != header_b {
        return Err(Error::HeaderMismatch {
            left: header_a,
            right: header_b,
        });
    }
    let schema = Schema::new(header_a)?;
    let tables = Tables {
        a: &table_a,
        b: &table_b,
    };
    Ok(Dataset {
        name: dataset_name(dir),
        train: read_split(&dir.join("train.csv"), &tables)?,
        valid: read_split(&dir.join("valid.csv"), &tables)?,
        test: read_split(&dir.join("test.csv"), &tables)?,
        schema,
    })
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

struct Tables<'a> {
    a: &'a HashMap<String, Record>,
    b: &'a HashMap<String, Record>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        file: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

fn headers(path: &Path, reader: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    Ok(header.iter().map(|h| h.trim_start_matches('\u{feff}').to_string()).collect())
}

fn read_table(path: &Path) -> Result<(Vec<String>, HashMap<String, Record>)> {
    let mut reader = open_csv(path)?;
    let header = headers(path, &mut reader)?;
    if header.first().map(String::as_str) != Some("id") {
        return Err(Error::Csv {
            file: path.to_path_buf(),
            line: 1,
            message: "first column must be `id`".into(),
        });
    }
    let mut rows = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let id = row[0].to_string();
        let record = Record::new(row.iter().skip(1));
        if rows.insert(id.clone(), record).is_some() {
            return Err(Error::Csv {
                file: path.to_path_buf(),
                line,
                message: format!("duplicate id {id:?}"),
            });
        }
    }
    Ok((header[1..].to_vec(), rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
        file: path.to_path_buf(),
        line: 1,
        message: format!("missing column `{name}`"),
    })
}

fn parse_label(path: &Path, line: u64, value: &str) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::InvalidLabel {
            file: path.to_path_buf(),
            line,
            value: value.to_string(),
        }),
    }
}

fn read_split(path: &Path, tables: &Tables<'_>) -> Result<Vec<LabeledPair>> {
    let mut reader = open_csv(path)?;
    let header = headers(path, &mut reader)?;
    let l_col = column(path, &header, "ltable_id")?;
    let r_col = column(path, &header, "rtable_id")?;
    let label_col = column(path, &header, "label")?;

    let lookup = |table: &HashMap<String, Record>, name: &str, id: &str, line: u64| {
        table.get(id).cloned().ok_or_else(|| Error::DanglingReference {
            file: path.to_path_buf(),
            line,
            table: name.to_string(),
            id: id.to_string(),
        })
    };

    let mut pairs = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let left = lookup(tables.a, "tableA", &row[l_col], line)?;
        let right = lookup(tables.b, "tableB", &row[r_col], line)?;
        let label = parse_label(path, line, &row[label_col])?;
        pairs.push(LabeledPair::new(left, right, label));
    }
    Ok(pairs)
}

/// Rows of a pairs-layout CSV. `label` is `None` when the file has no label
/// column; `id` falls back to the zero-based row index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub id: String,
    pub left: Record,
    pub right: Record,
    pub label: Option<bool>,
}

/// Reads a pairs-layout CSV whose label column may be absent.
pub fn read_pair_rows(path: &Path) -> Result<(Schema, Vec<PairRow>)> {
    let mut reader = open_csv(path)?;
    let header = headers(path, &mut reader)?;
    let bad_header = |message: String| Error::Csv {
        file: path.to_path_buf(),
        line: 1,
        message,
    };

    let mut left_cols = Vec::new();
    let mut right_cols = Vec::new();
    let mut id_col = None;
    let mut label_col = None;
    for (i, name) in header.iter().enumerate() {
        if let Some(attr) = name.strip_prefix(LEFT_PREFIX) {
            left_cols.push((attr.to_string(), i));
        } else if let Some(attr) = name.strip_prefix(RIGHT_PREFIX) {
            right_cols.push((attr.to_string(), i));
        } else if name == "id" {
            id_col = Some(i);
        } else if name == "label" {
            label_col = Some(i);
        } else {
            return Err(bad_header(format!("unexpected column `{name}`")));
        }
    }
    let left_names: Vec<&String> = left_cols.iter().map(|(n, _)| n).collect();
    let right_names: Vec<&String> = right_cols.iter().map(|(n, _)| n).collect();
    if left_names != right_names {
        return Err(bad_header(format!(
            "left and right attributes differ: {left_names:?} vs {right_names:?}"
        )));
    }
    let schema = Schema::new(left_cols.iter().map(|(n, _)| n.clone()))
        .map_err(|e| bad_header(e.to_string()))?;

    let mut rows = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label = match label_col {
            Some(c) => Some(parse_label(path, line, &row[c])?),
            None => None,
        };
        rows.push(PairRow {
            id: id_col.map_or_else(|| index.to_string(), |c| row[c].to_string()),
            left: Record::new(left_cols.iter().map(|(_, c)| &row[*c])),
            right: Record::new(right_cols.iter().map(|(_, c)| &row[*c])),
            label,
        });
    }
    Ok((schema, rows))
}

/// Reads a labeled pairs-layout CSV.
pub fn read_pairs_csv(path: &Path) -> Result<(Schema, Vec<LabeledPair>)> {
    let (schema, rows) = read_pair_rows(path)?;
    let pairs = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| match row.label {
            Some(label) => Ok(LabeledPair::new(row.left, row.right, label)),
            None => Err(Error::Csv {
                file: path.to_path_buf(),
                line: i as u64 + 2,
                message: "missing `label` column".into(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((schema, pairs))
}

/// Writes pairs in the pairs layout (`left_*`, `right_*`, `label`).
pub fn write_pairs_csv(path: &Path, schema: &Schema, pairs: &[LabeledPair]) -> Result<()> {
    let to_err = |e: csv::Error| Error::Csv {
        file: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
    let header = schema
        .attributes()
        .iter()
        .map(|a| format!("{LEFT_PREFIX}{a}"))
        .chain(schema.attributes().iter().map(|a| format!("{RIGHT_PREFIX}{a}")))
        .chain(std::iter::once("label".to_string()));
    writer.write_record(header).map_err(to_err)?;
    for pair in pairs {
        let label = if pair.label { "1" } else { "0" };
        let row = pair
            .left
            .values
            .iter()
            .chain(&pair.right.values)
            .map(String::as_str)
            .chain(std::iter::once(label));
        writer.write_record(row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(PathBuf::from(path), e))
}
