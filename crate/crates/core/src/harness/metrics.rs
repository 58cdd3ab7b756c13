//! Accuracy metrics and their CSV persistence.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "method,hparams,seed,task_trained,dataset_index,split,accuracy";
pub const INDEX_HEADER: &str = "experiment,method,hparams,seed,role,val_faa,test_faa,records";
pub const INDEX_FILE: &str = "index.csv";

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("accuracy of an empty dataset".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of the per-dataset accuracies after the last task.
pub fn final_average_accuracy(per_dataset: &[f64]) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::Invalid("final average accuracy over no datasets".into()));
    }
    Ok(per_dataset.iter().sum::<f64>() / per_dataset.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Val,
    Test,
}

/// Accuracy on one dataset after training on one task. Task and dataset
/// indices count from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub hparams: String,
    pub seed: u64,
    pub task_trained: usize,
    pub dataset_index: usize,
    pub split: Split,
    pub accuracy: f64,
}

/// `T×T` matrix: row `t` holds the accuracies on every dataset after task `t`.
pub fn accuracy_matrix(records: &[MetricsRecord], split: Split) -> Vec<Vec<f64>> {
    let t_max = records.iter().map(|r| r.task_trained).max().unwrap_or(0);
    let i_max = records.iter().map(|r| r.dataset_index).max().unwrap_or(0);
    let mut m = vec![vec![f64::NAN; i_max]; t_max];
    for r in records.iter().filter(|r| r.split == split) {
        m[r.task_trained - 1][r.dataset_index - 1] = r.accuracy;
    }
    m
}

/// FAA from the records of the last trained task.
pub fn faa_from_records(records: &[MetricsRecord], split: Split) -> Result<f64> {
    let last = records
        .iter()
        .map(|r| r.task_trained)
        .max()
        .ok_or_else(|| Error::Invalid("no records".into()))?;
    let accs: Vec<f64> = records
        .iter()
        .filter(|r| r.split == split && r.task_trained == last)
        .map(|r| r.accuracy)
        .collect();
    final_average_accuracy(&accs)
}

pub fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(RECORDS_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RECORDS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header {RECORDS_HEADER:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One line of the append-only results index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub experiment: String,
    pub method: String,
    pub hparams: String,
    pub seed: u64,
    /// `run`, `cell`, `best` or `error`.
    pub role: String,
    pub val_faa: Option<f64>,
    pub test_faa: Option<f64>,
    /// Records file, relative to the output directory.
    pub records: String,
}

static INDEX_LOCK: Mutex<()> = Mutex::new(());

/// Appends to `<out_dir>/index.csv`, writing the header when the file is new.
pub fn append_index(out_dir: &Path, entries: &[IndexEntry]) -> Result<()> {
    let _guard = INDEX_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(INDEX_FILE);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let fresh = file.metadata().map_err(|e| Error::io(&path, e))?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if fresh {
        w.write_record(INDEX_HEADER.split(','))?;
    }
    for e in entries {
        w.serialize(e)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Invalid(format!("index buffer: {e}")))?;
    file.write_all(&bytes).map_err(|e| Error::io(&path, e))
}

pub fn read_index(out_dir: &Path) -> Result<Vec<IndexEntry>> {
    let path = out_dir.join(INDEX_FILE);
    if !path.exists() {
        return Err(Error::Invalid(format!(
            "no results index at {}; run or tune first",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(&path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        let labels = [0, 0, 1, 1, 2, 2];
        assert!((accuracy(&[1; 6], &labels).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn faa_examples() {
        assert!((final_average_accuracy(&[1.0 / 3.0; 3]).unwrap() - 0.333333).abs() < 1e-6);
        assert_eq!(final_average_accuracy(&[0.7]).unwrap(), 0.7);
        assert!((final_average_accuracy(&[0.9, 0.8, 1.0]).unwrap() - 0.9).abs() < 1e-12);
        assert!(final_average_accuracy(&[]).is_err());
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let records: Vec<MetricsRecord> = (0..6)
            .map(|k| MetricsRecord {
                method: "aqc".into(),
                hparams: "lambda=100".into(),
                seed: 3,
                task_trained: k / 3 + 1,
                dataset_index: k % 3 + 1,
                split: if k % 2 == 0 { Split::Val } else { Split::Test },
                accuracy: 1.0 / (k as f64 + 3.0),
            })
            .collect();
        write_records(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(RECORDS_HEADER));
        assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn index_appends_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let e = IndexEntry {
            experiment: "x".into(),
            method: "si".into(),
            hparams: "lambda=1;xi=0.1".into(),
            seed: 0,
            role: "cell".into(),
            val_faa: Some(0.5),
            test_faa: None,
            records: "x/si/a.csv".into(),
        };
        append_index(dir.path(), std::slice::from_ref(&e)).unwrap();
        append_index(dir.path(), std::slice::from_ref(&e)).unwrap();
        let text = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(text.matches("experiment,").count(), 1);
        assert_eq!(read_index(dir.path()).unwrap(), vec![e.clone(), e]);
    }
}
