//! Tabular data ingestion and preparation.
//!
//! A [`RawTable`] is read from CSV, turned into a binary-labelled [`Dataset`]
//! by one of the preprocessing recipes, split 70/15/15 with [`make_splits`],
//! and finally standardized with statistics fitted on the training rows only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(x) => write!(f, "{x}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl Cell {
    fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(x) => Some(*x),
            Cell::Text(_) => None,
        }
    }

    /// Textual equality, with numeric cells compared by value.
    fn matches(&self, label: &str) -> bool {
        match self {
            Cell::Text(s) => s == label,
            Cell::Number(x) => label.trim().parse::<f64>().is_ok_and(|l| l == *x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    rows: Vec<Vec<Cell>>,
}

impl RawTable {
    /// Builds a table from text cells, inferring column kinds: a column whose
    /// every cell parses as a finite number is numeric, anything else is
    /// categorical.
    pub fn from_text(column_names: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if column_names.is_empty() {
            return Err(Error::EmptyTable("no header columns".into()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyTable("header without data rows".into()));
        }
        let width = column_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: width,
                    found: r.len(),
                });
            }
            if let Some(j) = r.iter().position(|c| c.trim().is_empty()) {
                return Err(Error::MissingValue {
                    row: i + 1,
                    column: column_names[j].clone(),
                });
            }
        }
        let column_kinds: Vec<ColumnKind> = (0..width)
            .map(|j| {
                let numeric = rows
                    .iter()
                    .all(|r| r[j].trim().parse::<f64>().is_ok_and(f64::is_finite));
                if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            })
            .collect();
        let rows = rows
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .zip(&column_kinds)
                    .map(|(c, kind)| match kind {
                        ColumnKind::Numeric => Cell::Number(c.trim().parse().expect("checked numeric")),
                        ColumnKind::Categorical => Cell::Text(c.trim().to_string()),
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            column_names,
            column_kinds,
            rows,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            context: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses RFC 4180 CSV with a header row.
pub fn parse_csv(bytes: &[u8]) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let csv_err = |source| Error::Csv {
        context: "input".into(),
        source,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::EmptyTable("missing header row".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    RawTable::from_text(header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub positive_class_name: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        positive_class_name: impl Into<String>,
    ) -> Result<Self> {
        if features.cols() == 0 {
            return Err(Error::Schema("dataset has no feature columns".into()));
        }
        if features.rows() < 2 {
            return Err(Error::Schema(format!("dataset has {} rows, need at least 2", features.rows())));
        }
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Label(format!("label {bad} is not binary")));
        }
        let positives = labels.iter().filter(|&&y| y == 1).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::Label("both classes must be present".into()));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            positive_class_name: positive_class_name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn k(&self) -> usize {
        self.features.cols()
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// CSV text with the features followed by a 0/1 `target` column.
    pub fn to_csv(&self, target: &str) -> Result<Vec<u8>> {
        let csv_err = |source| Error::Csv { context: "dataset export".into(), source };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push(target.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (row, y) in self.features.iter_rows().zip(&self.labels) {
            let mut fields: Vec<String> = row.iter().map(|v| crate::format_f64(*v)).collect();
            fields.push(y.to_string());
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::io("dataset export", e.into_error()))
    }

    /// Returns a copy with every row transformed by a scaler fitted on
    /// `splits.train_idx`.
    pub fn standardized(&self, splits: &DataSplits) -> Result<(Dataset, Scaler)> {
        splits.check(self.n())?;
        let (features, scaler) = standardize(&self.features, &splits.train_idx)?;
        Ok((
            Dataset {
                features,
                labels: self.labels.clone(),
                feature_names: self.feature_names.clone(),
                positive_class_name: self.positive_class_name.clone(),
            },
            scaler,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplits {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl DataSplits {
    /// Verifies the three index lists partition `0..n`.
    pub fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train_idx.iter().chain(&self.val_idx).chain(&self.test_idx) {
            if i >= n {
                return Err(Error::Shape(format!("split index {i} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!("split index {i} appears twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Shape("splits do not cover every row".into()));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0x5b1f;
const BLOBS_STREAM: u64 = 0xb10b;

/// Shuffles `0..n` under `seed` and cuts it 70/15/15. Train and validation
/// sizes are floored; the test split takes the remainder.
pub fn make_splits(n: usize, seed: u64) -> Result<DataSplits> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 rows to populate train/validation/test, got {n}"
        )));
    }
    let n_train = 70 * n / 100;
    let n_val = 15 * n / 100;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[SPLIT_STREAM]));
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..n_train + n_val].to_vec();
    let mut test_idx = order[n_train + n_val..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(DataSplits {
        train_idx,
        val_idx,
        test_idx,
        seed,
    })
}

/// Per-column affine transform `(x - mean) / std`.
///
/// `stds` holds the divisor actually applied, which is 1 for constant columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn transform(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        out
    }
}

/// Fits mean and population standard deviation on `fit_idx` rows and applies
/// the transform to every row.
pub fn standardize(features: &Matrix, fit_idx: &[usize]) -> Result<(Matrix, Scaler)> {
    if fit_idx.is_empty() {
        return Err(Error::InvalidArgument("standardization fit set is empty".into()));
    }
    if let Some(&bad) = fit_idx.iter().find(|&&i| i >= features.rows()) {
        return Err(Error::Shape(format!("fit index {bad} out of range")));
    }
    let m = fit_idx.len() as f64;
    let k = features.cols();
    let mut means = vec![0.0; k];
    let mut stds = vec![1.0; k];
    for j in 0..k {
        let mean = fit_idx.iter().map(|&i| features.get(i, j)).sum::<f64>() / m;
        let var = fit_idx
            .iter()
            .map(|&i| (features.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / m;
        let std = var.sqrt();
        means[j] = mean;
        // Constant columns are only centred.
        stds[j] = if std > 1e-12 * (1.0 + mean.abs()) { std } else { 1.0 };
    }
    let scaler = Scaler { means, stds };
    Ok((scaler.transform(features), scaler))
}

/// Column names of the public student-performance table.
pub const AMRIEH_COLUMNS: [&str; 17] = [
    "gender",
    "NationalITy",
    "PlaceofBirth",
    "StageID",
    "GradeID",
    "SectionID",
    "Topic",
    "Semester",
    "Relation",
    "raisedhands",
    "VisITedResources",
    "AnnouncementsView",
    "Discussion",
    "ParentAnsweringSurvey",
    "ParentschoolSatisfaction",
    "StudentAbsenceDays",
    "Class",
];

pub const AMRIEH_DROPPED: [&str; 5] = ["Topic", "NationalITy", "PlaceofBirth", "SectionID", "GradeID"];

pub const AMRIEH_TARGET: &str = "Class";

fn amrieh_label(cell: &Cell) -> Result<Option<u8>> {
    let text = cell.to_string();
    match text.to_ascii_lowercase().as_str() {
        "h" | "high" => Ok(Some(1)),
        "l" | "low" => Ok(Some(0)),
        "m" | "medium" => Ok(None),
        _ => Err(Error::Label(format!("unexpected target value '{text}'"))),
    }
}

/// The student-performance recipe: drops five descriptive columns, removes
/// the middle grade band, maps High to 1 and Low to 0, and one-hot encodes
/// the remaining categoricals with the alphabetically first level dropped.
pub fn preprocess_amrieh(table: &RawTable) -> Result<Dataset> {
    let missing: Vec<&str> = AMRIEH_COLUMNS
        .iter()
        .copied()
        .filter(|c| table.column_index(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "not the student-performance schema; missing columns: {}",
            missing.join(", ")
        )));
    }
    let target = table.column_index(AMRIEH_TARGET).expect("checked");
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in table.rows().iter().enumerate() {
        if let Some(y) = amrieh_label(&row[target])? {
            keep.push(i);
            labels.push(y);
        }
    }
    let drop: Vec<&str> = AMRIEH_DROPPED.to_vec();
    encode(table, target, &keep, labels, &drop, "High")
}

/// Recipe for an arbitrary binary-target table: rows whose target equals
/// `positive_label` become 1, all others 0; the target must take exactly two
/// distinct values.
pub fn preprocess_generic(
    table: &RawTable,
    target_column: &str,
    positive_label: &str,
    drop_columns: &[String],
) -> Result<Dataset> {
    let target = table
        .column_index(target_column)
        .ok_or_else(|| Error::Schema(format!("target column '{target_column}' not found")))?;
    for d in drop_columns {
        if table.column_index(d).is_none() {
            return Err(Error::Schema(format!("drop column '{d}' not found")));
        }
    }
    let distinct: BTreeSet<String> = table.rows().iter().map(|r| r[target].to_string()).collect();
    if distinct.len() != 2 {
        return Err(Error::Label(format!(
            "target '{target_column}' must be binary, found {} distinct values",
            distinct.len()
        )));
    }
    let labels: Vec<u8> = table
        .rows()
        .iter()
        .map(|r| u8::from(r[target].matches(positive_label)))
        .collect();
    if !labels.contains(&1) {
        return Err(Error::Label(format!(
            "positive label '{positive_label}' does not occur in '{target_column}'"
        )));
    }
    let keep: Vec<usize> = (0..table.n_rows()).collect();
    let drop: Vec<&str> = drop_columns.iter().map(String::as_str).collect();
    let dataset = encode(table, target, &keep, labels, &drop, positive_label)?;
    let k = dataset.k();
    let all_constant = (0..k).all(|j| {
        let first = dataset.features.get(0, j);
        dataset.features.iter_rows().all(|r| r[j] == first)
    });
    if all_constant {
        return Err(Error::Schema("every feature column is constant".into()));
    }
    Ok(dataset)
}

/// Numeric passthrough plus drop-first one-hot encoding over the kept rows.
fn encode(
    table: &RawTable,
    target: usize,
    keep: &[usize],
    labels: Vec<u8>,
    drop: &[&str],
    positive_class_name: &str,
) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::Label("no instances remain after target filtering".into()));
    }
    let rows = table.rows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (j, name) in table.column_names().iter().enumerate() {
        if j == target || drop.contains(&name.as_str()) {
            continue;
        }
        match table.column_kinds()[j] {
            ColumnKind::Numeric => {
                columns.push(keep.iter().map(|&i| rows[i][j].as_number().expect("numeric")).collect());
                names.push(name.clone());
            }
            ColumnKind::Categorical => {
                let levels: BTreeMap<String, ()> = keep.iter().map(|&i| (rows[i][j].to_string(), ())).collect();
                for level in levels.keys().skip(1) {
                    columns.push(
                        keep.iter()
                            .map(|&i| if rows[i][j].to_string() == *level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    names.push(format!("{name}_{level}"));
                }
            }
        }
    }
    let n = keep.len();
    let k = columns.len();
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        data.extend(columns.iter().map(|c| c[i]));
    }
    Dataset::new(Matrix::new(n, k, data)?, labels, names, positive_class_name)
}

/// Two unit-variance Gaussian classes whose means are `separation` apart
/// along a random unit direction. Labels alternate 0, 1, 0, 1, ...
pub fn synthetic_blobs(n: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("n must be even and at least 2, got {n}")));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 features, got {k}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = rng_from(seed, &[BLOBS_STREAM]);
    let direction = loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
        }
    };
    let mut data = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let offset = (f64::from(y) - 0.5) * separation;
        for d in &direction {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(offset * d + noise);
        }
        labels.push(y);
    }
    let names = (0..k).map(|j| format!("x{j}")).collect();
    Dataset::new(Matrix::new(n, k, data)?, labels, names, "1")
}

/// Everything needed to rebuild the exact model inputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub n: usize,
    pub feature_names: Vec<String>,
    pub positive_class_name: String,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub splits: DataSplits,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(csv: &str) -> Result<RawTable> {
        parse_csv(csv.as_bytes())
    }

    #[test]
    fn infers_column_kinds() {
        let t = table("a,b\n1,x\n2,y\n").unwrap();
        assert_eq!(t.column_kinds(), &[ColumnKind::Numeric, ColumnKind::Categorical]);
        assert_eq!(t.n_rows(), 2);
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = table("a,b\n1,x,z\n").unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 1, expected: 2, found: 3 }), "{err}");
    }

    #[test]
    fn rejects_empty_and_missing() {
        assert!(matches!(table("a,b\n").unwrap_err(), Error::EmptyTable(_)));
        assert!(matches!(table("").unwrap_err(), Error::EmptyTable(_)));
        assert!(matches!(table("a,b\n1,\n").unwrap_err(), Error::MissingValue { .. }));
        assert!(matches!(load_csv("/nonexistent/file.csv").unwrap_err(), Error::Io { .. }));
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let t = table("a,b\n\"1\",\"x, y\"\n2,\"say \"\"hi\"\"\"\n").unwrap();
        assert_eq!(t.rows()[0][1], Cell::Text("x, y".into()));
        assert_eq!(t.rows()[1][1], Cell::Text("say \"hi\"".into()));
        assert_eq!(t.column_kinds()[0], ColumnKind::Numeric);
    }

    #[test]
    fn split_sizes() {
        let s = make_splits(269, 3).unwrap();
        assert_eq!((s.train_idx.len(), s.val_idx.len(), s.test_idx.len()), (188, 40, 41));
        let s = make_splits(100, 3).unwrap();
        assert_eq!((s.train_idx.len(), s.val_idx.len(), s.test_idx.len()), (70, 15, 15));
        assert!(make_splits(9, 0).is_err());
    }

    #[test]
    fn splits_are_deterministic_and_seed_sensitive() {
        assert_eq!(make_splits(269, 11).unwrap(), make_splits(269, 11).unwrap());
        let differing = (0..10u64)
            .filter(|&s| make_splits(50, s).unwrap().train_idx != make_splits(50, s + 100).unwrap().train_idx)
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn standardize_hand_example() {
        let m = Matrix::from_rows(&[vec![0.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]]).unwrap();
        let (z, scaler) = standardize(&m, &[0, 1]).unwrap();
        assert_eq!(z.get(0, 0), -1.0);
        assert_eq!(z.get(1, 0), 1.0);
        assert_eq!(z.get(2, 0), 3.0);
        // constant column: zeros, divisor 1
        assert!(z.iter_rows().all(|r| r[1] == 0.0));
        assert_eq!(scaler.stds[1], 1.0);
        assert!(standardize(&m, &[]).is_err());
    }

    #[test]
    fn standardize_is_idempotent_on_fit_rows() {
        let m = Matrix::from_rows(&[vec![1.0], vec![4.0], vec![9.0], vec![-3.0]]).unwrap();
        let (z, _) = standardize(&m, &[0, 1, 2, 3]).unwrap();
        let (zz, _) = standardize(&z, &[0, 1, 2, 3]).unwrap();
        for (a, b) in z.as_slice().iter().zip(zz.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn standardized_fit_rows_have_zero_mean_unit_std(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40)
        ) {
            let m = Matrix::from_rows(&rows).unwrap();
            let fit: Vec<usize> = (0..m.rows()).collect();
            let (z, scaler) = standardize(&m, &fit).unwrap();
            for j in 0..3 {
                if scaler.stds[j] == 1.0 && rows.iter().all(|r| r[j] == rows[0][j]) {
                    continue;
                }
                let mean = z.iter_rows().map(|r| r[j]).sum::<f64>() / z.rows() as f64;
                let std = (z.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / z.rows() as f64).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn splits_partition_rows(n in 10usize..500, seed in any::<u64>()) {
            let s = make_splits(n, seed).unwrap();
            s.check(n).unwrap();
            prop_assert_eq!(s.train_idx.len(), 70 * n / 100);
            prop_assert_eq!(s.val_idx.len(), 15 * n / 100);
        }
    }

    #[test]
    fn one_hot_drops_first_level() {
        let t = table("c,num,y\nb,1,p\na,2,n\nc,3,p\na,4,n\n").unwrap();
        let d = preprocess_generic(&t, "y", "p", &[]).unwrap();
        assert_eq!(d.feature_names, vec!["c_b", "c_c", "num"]);
        for r in d.features.iter_rows() {
            assert!(r[0] + r[1] <= 1.0);
        }
        assert_eq!(d.labels, vec![1, 0, 1, 0]);
    }

    #[test]
    fn binary_categoricals_give_one_column_each() {
        let t = table("g,s,y\nF,Yes,a\nM,No,b\nF,No,a\n").unwrap();
        let d = preprocess_generic(&t, "y", "a", &[]).unwrap();
        assert_eq!(d.k(), 2);
    }

    #[test]
    fn numeric_only_passthrough() {
        let t = table("u,v,w,y\n1,2,3,0\n4,5,6,1\n7,8,9,0\n").unwrap();
        let d = preprocess_generic(&t, "y", "1", &["w".into()]).unwrap();
        assert_eq!(d.feature_names, vec!["u", "v"]);
        assert_eq!(d.labels, vec![0, 1, 0]);
    }

    #[test]
    fn generic_errors() {
        let t = table("u,y\n1,a\n2,b\n3,c\n").unwrap();
        assert!(matches!(preprocess_generic(&t, "y", "a", &[]), Err(Error::Label(_))));
        assert!(matches!(preprocess_generic(&t, "nope", "a", &[]), Err(Error::Schema(_))));
        let t = table("u,y\n1,a\n1,b\n").unwrap();
        assert!(matches!(preprocess_generic(&t, "y", "a", &[]), Err(Error::Schema(_))));
    }

    #[test]
    fn amrieh_rejects_foreign_schema_and_medium_only() {
        let t = table("a,b\n1,x\n").unwrap();
        assert!(matches!(preprocess_amrieh(&t), Err(Error::Schema(_))));

        let header = AMRIEH_COLUMNS.join(",");
        let row = "M,KW,KuwaIT,lowerlevel,G-04,A,IT,F,Father,15,16,2,20,Yes,Good,Under-7,M";
        let t = table(&format!("{header}\n{row}\n{row}\n")).unwrap();
        assert!(preprocess_amrieh(&t).is_err());
        let bad = row.replace("Under-7,M", "Under-7,X");
        let t = table(&format!("{header}\n{bad}\n")).unwrap();
        assert!(matches!(preprocess_amrieh(&t), Err(Error::Label(_))));
    }

    #[test]
    fn blobs_validate_and_balance() {
        assert!(synthetic_blobs(401, 12, 1.0, 0).is_err());
        assert!(synthetic_blobs(400, 1, 1.0, 0).is_err());
        assert!(synthetic_blobs(400, 12, -1.0, 0).is_err());
        let d = synthetic_blobs(400, 12, 6.0, 0).unwrap();
        assert_eq!(d.labels.iter().filter(|&&y| y == 1).count(), 200);
        assert_eq!(d, synthetic_blobs(400, 12, 6.0, 0).unwrap());
    }

    #[test]
    fn csv_export_reloads_identically() {
        let d = synthetic_blobs(20, 3, 1.5, 4).unwrap();
        let table = parse_csv(&d.to_csv("label").unwrap()).unwrap();
        let back = preprocess_generic(&table, "label", "1", &[]).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.feature_names, d.feature_names);
    }
}
