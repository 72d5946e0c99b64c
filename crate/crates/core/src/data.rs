//! Datasets, CSV ingestion, feature standardization and seeded splitting.
//!
//! Feature matrices are dense and row-major. A [`Dataset`] is validated once
//! on construction and never mutated afterwards; transformations return new
//! values.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-feature scales so constant columns do not divide by zero.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
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

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column_vector(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Kind of learning task, used when ingesting data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Binary,
    Multiclass,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// A learning task together with its number of classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

impl Task {
    /// Number of model outputs (score columns).
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Regression | Task::Binary => 1,
            Task::Multiclass { classes } => classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }

    /// Number of classes, 1 for regression.
    pub fn classes(&self) -> usize {
        match *self {
            Task::Regression => 1,
            Task::Binary => 2,
            Task::Multiclass { classes } => classes,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Regression => TaskKind::Regression,
            Task::Binary => TaskKind::Binary,
            Task::Multiclass { .. } => TaskKind::Multiclass,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
            Task::Multiclass { .. } => "multiclass",
        }
    }
}

/// Feature matrix, targets and task.
///
/// Classification targets are class indices stored as `f64`. When the data
/// came from text labels, `class_labels[k]` is the original label of class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    targets: Vec<f64>,
    task: Task,
    feature_names: Option<Vec<String>>,
    class_labels: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>, task: Task) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid("dataset needs at least one row and one feature"));
        }
        if targets.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} targets for {} rows",
                targets.len(),
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("target {bad}")));
        }
        if let Task::Multiclass { classes } = task {
            if classes < 2 {
                return Err(Error::invalid("multiclass task needs at least two classes"));
            }
        }
        let classes = task.classes();
        if task.is_classification() {
            for &t in &targets {
                if t < 0.0 || t.fract() != 0.0 || t as usize >= classes {
                    return Err(Error::InvalidLabel(t.to_string()));
                }
            }
        }
        Ok(Self {
            features,
            targets,
            task,
            feature_names: None,
            class_labels: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.features.cols() {
            return Err(Error::invalid("feature name count does not match columns"));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn with_class_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.task.classes() {
            return Err(Error::invalid("class label count does not match the task"));
        }
        self.class_labels = Some(labels);
        Ok(self)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn class_labels(&self) -> Option<&[String]> {
        self.class_labels.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Re-indexes classification targets so that class `k` means
    /// `reference[k]`, as needed when a second file is read independently
    /// and may miss some classes. Labels absent from `reference` are errors.
    pub fn align_labels(&self, reference: &[String]) -> Result<Dataset> {
        if !self.task.is_classification() {
            return Ok(self.clone());
        }
        let task = match self.task {
            Task::Binary if reference.len() == 2 => Task::Binary,
            Task::Multiclass { .. } if reference.len() >= 2 => Task::Multiclass {
                classes: reference.len(),
            },
            _ => {
                return Err(Error::invalid(format!(
                    "{} reference labels for a {} task",
                    reference.len(),
                    self.task.name()
                )))
            }
        };
        let own = self
            .class_labels
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no class labels to align"))?;
        // Padding labels that no row uses may be missing from `reference`.
        let map: Vec<Option<usize>> = own.iter().map(|l| reference.iter().position(|r| r == l)).collect();
        let targets = self
            .targets
            .iter()
            .map(|&t| {
                map[t as usize]
                    .map(|k| k as f64)
                    .ok_or_else(|| Error::InvalidLabel(own[t as usize].clone()))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Dataset {
            targets,
            task,
            class_labels: Some(reference.to_vec()),
            ..self.clone()
        })
    }

    /// Rows `indices`, in that order, keeping names and labels.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        Ok(Dataset {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            task: self.task,
            feature_names: self.feature_names.clone(),
            class_labels: self.class_labels.clone(),
        })
    }

    /// Same targets and metadata with a replaced feature matrix of equal shape.
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        if features.rows() != self.features.rows() || features.cols() != self.features.cols() {
            return Err(Error::invalid("replacement feature matrix has a different shape"));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Dataset {
            features,
            ..self.clone()
        })
    }
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
    Last,
}

impl std::str::FromStr for TargetColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "n/a" | "null" | "none" | "?" | "-nan"
    )
}

fn parse_number(cell: &str, line: usize, column: usize) -> Result<f64> {
    if is_missing(cell) {
        return Err(Error::MissingValue { line, column });
    }
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: `{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("line {line}, column {column}: `{cell}`")));
    }
    Ok(v)
}

/// Enumerates class labels: numerically when every label is a number,
/// lexicographically otherwise.
fn enumerate_labels(raw: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut labels: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(labels).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        labels = paired.into_iter().map(|(_, l)| l).collect();
    }
    labels
}

/// Reads a dataset from CSV text.
pub fn read_csv<R: Read>(
    reader: R,
    target: &TargetColumn,
    task: TaskKind,
    header: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut names: Option<Vec<String>> = None;
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut width = None;
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let row: Vec<String> = record.iter().map(str::to_string).collect();
        if header && names.is_none() {
            names = Some(row);
        } else {
            cells.push(row);
        }
    }
    let width = width.ok_or_else(|| Error::invalid("empty CSV input"))?;
    if width < 2 {
        return Err(Error::invalid("CSV needs a target and at least one feature column"));
    }
    let target_idx = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if *i < width => *i,
        TargetColumn::Index(i) => {
            return Err(Error::invalid(format!("target column {i} out of range")))
        }
        TargetColumn::Name(name) => names
            .as_ref()
            .and_then(|ns| ns.iter().position(|n| n == name))
            .ok_or_else(|| Error::invalid(format!("target column `{name}` not found")))?,
    };
    if cells.is_empty() {
        return Err(Error::invalid("CSV has no data rows"));
    }

    let first_line = if header { 2 } else { 1 };
    let n = cells.len();
    let p = width - 1;
    let mut data = Vec::with_capacity(n * p);
    let mut raw_targets = Vec::with_capacity(n);
    for (r, row) in cells.iter().enumerate() {
        let line = r + first_line;
        for (c, cell) in row.iter().enumerate() {
            if c == target_idx {
                if is_missing(cell) {
                    return Err(Error::MissingValue { line, column: c });
                }
                raw_targets.push((cell.clone(), line, c));
            } else {
                data.push(parse_number(cell, line, c)?);
            }
        }
    }
    let features = Matrix::new(n, p, data)?;

    let (targets, task, labels) = match task {
        TaskKind::Regression => {
            let t = raw_targets
                .iter()
                .map(|(cell, line, c)| parse_number(cell, *line, *c))
                .collect::<Result<Vec<_>>>()?;
            (t, Task::Regression, None)
        }
        TaskKind::Binary | TaskKind::Multiclass => {
            let raw: Vec<String> = raw_targets.iter().map(|(s, _, _)| s.clone()).collect();
            let labels = enumerate_labels(&raw);
            let task = match task {
                TaskKind::Binary => {
                    if labels.len() > 2 {
                        return Err(Error::InvalidLabel(labels[2].clone()));
                    }
                    Task::Binary
                }
                _ => Task::Multiclass {
                    classes: labels.len().max(2),
                },
            };
            let t = raw
                .iter()
                .map(|s| labels.iter().position(|l| l == s).unwrap() as f64)
                .collect();
            let mut labels = labels;
            // pad when a class is absent from this file
            while labels.len() < task.classes() {
                labels.push(labels.len().to_string());
            }
            (t, task, Some(labels))
        }
    };

    let mut ds = Dataset::new(features, targets, task)?;
    if let Some(mut ns) = names {
        ns.remove(target_idx);
        ds = ds.with_feature_names(ns)?;
    }
    if let Some(l) = labels {
        ds = ds.with_class_labels(l)?;
    }
    Ok(ds)
}

/// Loads a dataset from a CSV file.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &TargetColumn,
    task: TaskKind,
    header: bool,
) -> Result<Dataset> {
    read_csv(File::open(path)?, target, task, header)
}

/// Reads a headered or header-less CSV of feature columns only.
pub fn load_feature_csv(path: impl AsRef<Path>, header: bool) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::invalid(format!("{other:?}")),
        })?;
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1 + usize::from(header);
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| parse_number(cell, line, c))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("CSV has no data rows"));
    }
    Matrix::from_rows(&rows).map_err(|_| Error::Parse {
        line: 0,
        message: "rows have differing column counts".into(),
    })
}

/// Writes a dataset as CSV with a header row; the target is the last column.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let p = dataset.n_features();
    let names: Vec<String> = match dataset.feature_names() {
        Some(ns) => ns.to_vec(),
        None => (0..p).map(|j| format!("x{j}")).collect(),
    };
    writeln!(out, "{},y", names.join(","))?;
    let mut line = String::new();
    for (i, row) in dataset.features().row_iter().enumerate() {
        line.clear();
        for v in row {
            line.push_str(&v.to_string());
            line.push(',');
        }
        let t = dataset.targets()[i];
        match dataset.class_labels() {
            Some(labels) => line.push_str(&labels[t as usize]),
            None => line.push_str(&t.to_string()),
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(File::create(path)?);
    write_csv(dataset, file)
}

/// Per-feature centering and scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Means and sample standard deviations (n-1 denominator) of each column.
    pub fn fit(features: &Matrix) -> Standardizer {
        let n = features.rows();
        let p = features.cols();
        let mut means = vec![0.0; p];
        for row in features.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut ss = vec![0.0; p];
        for row in features.row_iter() {
            for ((s, v), m) in ss.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let scales = ss
            .into_iter()
            .map(|s| {
                let sd = if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 };
                sd.max(SCALE_FLOOR)
            })
            .collect();
        Standardizer { means, scales }
    }

    /// Leaves features untouched.
    pub fn identity(p: usize) -> Standardizer {
        Standardizer {
            means: vec![0.0; p],
            scales: vec![1.0; p],
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn is_identity(&self) -> bool {
        self.means.iter().all(|&m| m == 0.0) && self.scales.iter().all(|&s| s == 1.0)
    }

    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        self.check(features)?;
        if self.is_identity() {
            return Ok(features.clone());
        }
        let mut out = features.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, features: &Matrix) -> Result<Matrix> {
        self.check(features)?;
        let mut out = features.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.means).zip(&self.scales) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Result<Dataset> {
        data.with_features(self.transform(data.features())?)
    }

    fn check(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                found: features.cols(),
            });
        }
        Ok(())
    }
}

/// Train/validation/test fractions and the permutation seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    /// Three parts of equal size.
    pub fn thirds(seed: u64) -> Self {
        Self {
            fractions: [1.0 / 3.0; 3],
            seed,
        }
    }

    /// Part sizes for `n` rows. Rows left over after flooring go to train,
    /// then validation, then test.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        if self.fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
        }
        let mut sizes = [0usize; 3];
        for (s, f) in sizes.iter_mut().zip(&self.fractions) {
            *s = (f * n as f64 + 1e-9).floor() as usize;
        }
        let assigned: usize = sizes.iter().sum();
        let mut remainder = n.saturating_sub(assigned);
        let mut k = 0;
        while remainder > 0 {
            sizes[k % 3] += 1;
            remainder -= 1;
            k += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!(
                "split of {n} rows by {:?} leaves an empty part",
                self.fractions
            )));
        }
        Ok(sizes)
    }

    /// Disjoint index sets covering `0..n`.
    pub fn indices(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        let [a, b, _] = self.sizes(n)?;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        perm.shuffle(&mut rng);
        let test = perm.split_off(a + b);
        let validation = perm.split_off(a);
        Ok([perm, validation, test])
    }
}

/// Splits a dataset into (train, validation, test).
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = spec.indices(data.n_rows())?;
    Ok((data.subset(&tr)?, data.subset(&va)?, data.subset(&te)?))
}
