//! Datasets and task sequences.
//!
//! Feature files are plain text: a `#k=<K>,d=<D>` header followed by one
//! `label,f1,...,fD` line per example, `.` as radix, LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::Matrix;
use crate::error::{Error, Result};
use crate::nn::Head;

const IRIS: &str = include_str!("../data/iris.csv");
const WINE: &str = include_str!("../data/wine.csv");

/// Petal length and petal width.
const IRIS_2D_COLUMNS: [usize; 2] = [2, 3];

/// Labelled examples. `strata` keeps each row's original class so that
/// relabelled data still splits along the same partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    y: Vec<usize>,
    num_classes: usize,
    strata: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        let strata = y.clone();
        Self::with_strata(x, y, num_classes, strata)
    }

    fn with_strata(x: Matrix, y: Vec<usize>, num_classes: usize, strata: Vec<usize>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Invalid("dataset has no rows".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} rows for {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature entry {i}")));
        }
        Ok(Self {
            x,
            y,
            num_classes,
            strata,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// Original class of each row (equal to `y` unless relabelled).
    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        Self::with_strata(
            self.x.select_rows(rows),
            rows.iter().map(|&i| self.y[i]).collect(),
            self.num_classes,
            rows.iter().map(|&i| self.strata[i]).collect(),
        )
    }

    pub fn select_features(&self, cols: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.input_dim()) {
            return Err(Error::Dimension(format!(
                "feature {bad} outside width {}",
                self.input_dim()
            )));
        }
        Self::with_strata(
            self.x.select_cols(cols),
            self.y.clone(),
            self.num_classes,
            self.strata.clone(),
        )
    }

    /// Rows stacked in order. All parts must share width and label space.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.num_classes != first.num_classes) {
            return Err(Error::Invalid("datasets disagree on the label space".into()));
        }
        let x = Matrix::vstack(parts.iter().map(|p| &p.x))?;
        Self::with_strata(
            x,
            parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            first.num_classes,
            parts.iter().flat_map(|p| p.strata.iter().copied()).collect(),
        )
    }

    /// Same rows with labels mapped through `group_of` (class → 0/1).
    pub fn relabel(&self, group_of: &[usize]) -> Result<Dataset> {
        check_grouping(group_of, self.num_classes)?;
        Self::with_strata(
            self.x.clone(),
            self.y.iter().map(|&c| group_of[c]).collect(),
            2,
            self.strata.clone(),
        )
    }

    fn affine_columns(&self, mean: &[f64], scale: &[f64]) -> Result<Dataset> {
        let d = self.input_dim();
        let mut data = self.x.as_slice().to_vec();
        for row in data.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) / scale[j];
            }
        }
        Self::with_strata(
            Matrix::from_vec(self.len(), d, data)?,
            self.y.clone(),
            self.num_classes,
            self.strata.clone(),
        )
    }
}

fn check_grouping(group_of: &[usize], num_classes: usize) -> Result<()> {
    if group_of.len() < num_classes {
        return Err(Error::Invalid(format!(
            "grouping covers {} of {num_classes} classes",
            group_of.len()
        )));
    }
    if let Some(&bad) = group_of.iter().find(|&&g| g > 1) {
        return Err(Error::Invalid(format!("group {bad} is not binary")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Standardizes every split with the training split's column mean and
    /// standard deviation (constant columns are left unscaled).
    pub fn standardized(&self) -> Result<Splits> {
        let d = self.train.input_dim();
        let n = self.train.len() as f64;
        let mut mean = vec![0.0; d];
        for row in self.train.x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in self.train.x.row_iter() {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Splits {
            train: self.train.affine_columns(&mean, &scale)?,
            val: self.val.affine_columns(&mean, &scale)?,
            test: self.test.affine_columns(&mean, &scale)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "ci")]
    ClassIncremental,
    #[serde(rename = "di")]
    DomainIncremental,
}

/// One task of a sequence: its splits and the original classes it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub classes: Vec<usize>,
    pub splits: Splits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
    pub mode: Mode,
    /// Width of the shared label space the model predicts over.
    pub num_classes: usize,
    /// Class → binary group for domain-incremental sequences.
    pub grouping: Option<Vec<usize>>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn head(&self) -> Head {
        match self.mode {
            Mode::ClassIncremental => Head::Categorical,
            Mode::DomainIncremental => Head::Bernoulli,
        }
    }

    /// Output width of a model for this sequence.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            Mode::ClassIncremental => self.num_classes,
            Mode::DomainIncremental => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.splits.train.input_dim())
    }

    pub fn train(&self) -> Vec<&Dataset> {
        self.tasks.iter().map(|t| &t.splits.train).collect()
    }

    pub fn val(&self) -> Vec<&Dataset> {
        self.tasks.iter().map(|t| &t.splits.val).collect()
    }

    pub fn test(&self) -> Vec<&Dataset> {
        self.tasks.iter().map(|t| &t.splits.test).collect()
    }

    /// Tasks whose training labels are all identical.
    pub fn degenerate_tasks(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let y = t.splits.train.y();
                self.mode == Mode::DomainIncremental && y.iter().all(|&v| v == y[0])
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Canonical tables: `iris` (150×4), `wine` (178×13) and `iris2d` (petal
/// length and width only).
pub fn load_builtin(name: &str) -> Result<Dataset> {
    match name {
        "iris" => parse_feature_text(IRIS, Path::new("<builtin iris>")),
        "wine" => parse_feature_text(WINE, Path::new("<builtin wine>")),
        "iris2d" => load_builtin("iris")?.select_features(&IRIS_2D_COLUMNS),
        other => Err(Error::Invalid(format!(
            "unknown builtin dataset {other:?} (expected iris, wine or iris2d)"
        ))),
    }
}

/// Stratified 64/16/20 train/validation/test split. Per class: 20% (floor)
/// to test, then 20% (floor) of the rest to validation, the remainder to
/// training; each split gets at least one example of every class.
pub fn split_train_val_test(ds: &Dataset, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<usize> = ds.strata.clone();
    strata.sort_unstable();
    strata.dedup();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in strata {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.strata[i] == c).collect();
        let n = idx.len();
        if n < 3 {
            return Err(Error::Invalid(format!(
                "class {c} has {n} examples; a three-way split needs at least 3"
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = (n / 5).max(1);
        let n_val = ((n - n_test) / 5).max(1);
        test.extend_from_slice(&idx[..n_test]);
        val.extend_from_slice(&idx[n_test..n_test + n_val]);
        train.extend_from_slice(&idx[n_test + n_val..]);
    }
    for v in [&mut train, &mut val, &mut test] {
        v.sort_unstable();
    }
    Ok(Splits {
        train: ds.select(&train)?,
        val: ds.select(&val)?,
        test: ds.select(&test)?,
    })
}

/// Class-incremental sequence: task `i` holds the rows of the `i`-th block
/// of `classes_per_task` consecutive classes, labels unchanged.
pub fn split_by_class(splits: &Splits, classes_per_task: usize) -> Result<TaskSequence> {
    let k = splits.train.num_classes();
    if classes_per_task == 0 || k % classes_per_task != 0 {
        return Err(Error::Invalid(format!(
            "{k} classes cannot be split into tasks of {classes_per_task}"
        )));
    }
    let mut tasks = Vec::with_capacity(k / classes_per_task);
    for start in (0..k).step_by(classes_per_task) {
        let classes: Vec<usize> = (start..start + classes_per_task).collect();
        let pick = |ds: &Dataset, name: &str| -> Result<Dataset> {
            let rows: Vec<usize> = (0..ds.len())
                .filter(|&i| classes.contains(&ds.strata[i]))
                .collect();
            if rows.is_empty() {
                return Err(Error::Invalid(format!(
                    "{name} split has no rows for classes {classes:?}"
                )));
            }
            ds.select(&rows)
        };
        tasks.push(Task {
            splits: Splits {
                train: pick(&splits.train, "training")?,
                val: pick(&splits.val, "validation")?,
                test: pick(&splits.test, "test")?,
            },
            classes: classes.clone(),
        });
    }
    Ok(TaskSequence {
        tasks,
        mode: Mode::ClassIncremental,
        num_classes: k,
        grouping: None,
    })
}

/// Domain-incremental sequence from a class-incremental one: same rows,
/// labels replaced by `group_of[class] ∈ {0, 1}`.
pub fn relabel_binary(seq: &TaskSequence, group_of: &[usize]) -> Result<TaskSequence> {
    if seq.mode != Mode::ClassIncremental {
        return Err(Error::Invalid("only class-incremental sequences can be relabelled".into()));
    }
    check_grouping(group_of, seq.num_classes)?;
    let tasks = seq
        .tasks
        .iter()
        .map(|t| {
            Ok(Task {
                classes: t.classes.clone(),
                splits: Splits {
                    train: t.splits.train.relabel(group_of)?,
                    val: t.splits.val.relabel(group_of)?,
                    test: t.splits.test.relabel(group_of)?,
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(TaskSequence {
        tasks,
        mode: Mode::DomainIncremental,
        num_classes: seq.num_classes,
        grouping: Some(group_of[..seq.num_classes].to_vec()),
    })
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix("#k=")?;
    let (k, d) = rest.split_once(",d=")?;
    Some((k.parse().ok()?, d.parse().ok()?))
}

fn parse_feature_text(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or_default();
    let (k, d) = parse_header(header)
        .ok_or_else(|| err(1, format!("expected header `#k=<K>,d=<D>`, found {header:?}")))?;
    if k == 0 || d == 0 {
        return Err(err(1, "K and D must be positive".into()));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let body: Vec<&str> = lines.collect();
    for (i, line) in body.iter().enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            if i + 1 == body.len() {
                break;
            }
            return Err(err(lineno, "empty line".into()));
        }
        if line.ends_with('\r') {
            return Err(err(lineno, "CR line ending".into()));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", d + 1, fields.len()),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("label {:?} is not a non-negative integer", fields[0])))?;
        if label >= k {
            return Err(err(lineno, format!("label {label} outside [0, {k})")));
        }
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("feature {f:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("feature {f:?} is not finite")));
            }
            x.push(v);
        }
        y.push(label);
    }
    if y.is_empty() {
        return Err(err(1, "no examples".into()));
    }
    let n = y.len();
    Dataset::new(Matrix::from_vec(n, d, x)?, y, k)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_text(&text, path)
}

/// Renders a dataset in the feature-file format; floats use the shortest
/// representation that parses back to the same value.
pub fn feature_text(ds: &Dataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "#k={},d={}", ds.num_classes, ds.input_dim());
    for (row, &label) in ds.x.row_iter().zip(&ds.y) {
        let _ = write!(s, "{label}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn write_feature_file(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    fs::write(&path, feature_text(ds)).map_err(|e| Error::io(path, e))
}
