//! Summary tables over persisted results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::METHOD_NAMES;
use super::metrics::{read_index, IndexEntry};
use crate::error::{Error, Result};

/// Test FAA of one method on one experiment, aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub method: String,
    pub hparams: String,
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single seed.
    pub std: Option<f64>,
}

fn method_rank(name: &str) -> usize {
    METHOD_NAMES
        .iter()
        .position(|m| *m == name)
        .unwrap_or(METHOD_NAMES.len())
}

/// One row per (experiment, method) from `run` and tuned `best` entries;
/// a later entry for the same seed replaces an earlier one.
pub fn summarize(entries: &[IndexEntry]) -> Vec<ReportRow> {
    let mut latest: BTreeMap<(String, String, u64), &IndexEntry> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for e in entries.iter().filter(|e| e.role == "run" || e.role == "best") {
        if e.test_faa.is_none() {
            continue;
        }
        if !order.contains(&e.experiment) {
            order.push(e.experiment.clone());
        }
        latest.insert((e.experiment.clone(), e.method.clone(), e.seed), e);
    }
    let mut groups: BTreeMap<(usize, usize, String), Vec<&IndexEntry>> = BTreeMap::new();
    for ((exp, method, _), e) in &latest {
        let exp_rank = order.iter().position(|x| x == exp).unwrap_or(0);
        groups
            .entry((exp_rank, method_rank(method), method.clone()))
            .or_default()
            .push(e);
    }
    groups
        .into_values()
        .map(|es| {
            let vals: Vec<f64> = es.iter().filter_map(|e| e.test_faa).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.len() > 1).then(|| {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            });
            let mut hp: Vec<String> = es.iter().map(|e| e.hparams.clone()).collect();
            hp.dedup();
            ReportRow {
                experiment: es[0].experiment.clone(),
                method: es[0].method.clone(),
                hparams: hp.join(" | "),
                seeds: vals.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Methods as rows, experiments as columns, test FAA in percent.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut experiments: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !experiments.contains(&r.experiment.as_str()) {
            experiments.push(&r.experiment);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods.sort_by_key(|m| method_rank(m));
    let cell = |m: &str, e: &str| -> String {
        rows.iter()
            .find(|r| r.method == m && r.experiment == e)
            .map_or_else(
                || "-".to_string(),
                |r| match r.std {
                    Some(s) => format!("{:.4} ± {:.2}", 100.0 * r.mean, 100.0 * s),
                    None => format!("{:.4}", 100.0 * r.mean),
                },
            )
    };
    let mut widths: Vec<usize> = experiments.iter().map(|e| e.chars().count().max(8)).collect();
    for m in &methods {
        for (j, e) in experiments.iter().enumerate() {
            widths[j] = widths[j].max(cell(m, e).chars().count());
        }
    }
    let first = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:first$}", "method");
    for (e, w) in experiments.iter().zip(&widths) {
        let _ = write!(out, "  {e:>w$}");
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{m:first$}");
        for (e, w) in experiments.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", cell(m, e));
        }
        out.push('\n');
    }
    out
}

/// Reads `index.csv` under `out_dir`, writes `report.csv` next to it and
/// returns the rendered table.
pub fn report(out_dir: &Path) -> Result<(Vec<ReportRow>, String)> {
    let entries = read_index(out_dir)?;
    let rows = summarize(&entries);
    if rows.is_empty() {
        return Err(Error::Invalid(format!(
            "no completed runs recorded in {}",
            out_dir.display()
        )));
    }
    let path = out_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok((rows.clone(), render_table(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(exp: &str, method: &str, seed: u64, role: &str, faa: f64) -> IndexEntry {
        IndexEntry {
            experiment: exp.into(),
            method: method.into(),
            hparams: String::new(),
            seed,
            role: role.into(),
            val_faa: Some(faa),
            test_faa: Some(faa),
            records: String::new(),
        }
    }

    #[test]
    fn aggregates_over_seeds_and_skips_cells() {
        let rows = summarize(&[
            entry("iris", "nc", 0, "best", 0.9),
            entry("iris", "nc", 1, "best", 0.8),
            entry("iris", "nc", 2, "cell", 0.1),
            entry("iris", "finetune", 0, "run", 1.0 / 3.0),
            entry("wine", "finetune", 0, "best", 0.5),
        ]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].method, "finetune");
        let nc = rows.iter().find(|r| r.method == "nc").unwrap();
        assert_eq!(nc.seeds, 2);
        assert!((nc.mean - 0.85).abs() < 1e-12);
        assert!((nc.std.unwrap() - 0.0707106781).abs() < 1e-9);
        let table = render_table(&rows);
        assert!(table.contains("33.3333"), "{table}");
        assert!(table.lines().next().unwrap().contains("wine"));
    }

    #[test]
    fn later_entries_replace_earlier_ones() {
        let rows = summarize(&[
            entry("iris", "aqc", 0, "best", 0.5),
            entry("iris", "aqc", 0, "best", 0.7),
        ]);
        assert_eq!(rows[0].seeds, 1);
        assert_eq!(rows[0].mean, 0.7);
        assert!(rows[0].std.is_none());
    }
}
