//! Running methods over task sequences, tuning and persistence.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{
    accuracy, append_index, faa_from_records, write_records, IndexEntry, MetricsRecord, Split,
};
use crate::error::{Error, Result};
use crate::methods::{task_nll, Learner, Method, Problem};
use crate::nn::predict_class;
use crate::objectives::Nll;
use crate::tasks::{Dataset, TaskSequence};

/// Everything one method run produced. A failed run keeps the records
/// written before the failure.
#[derive(Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub val_faa: Option<f64>,
    pub test_faa: Option<f64>,
    pub learner: Option<Learner>,
    pub failure: Option<Error>,
    pub degenerate_tasks: Vec<usize>,
}

impl RunOutcome {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

fn evaluate(problem: &Problem, learner: &Learner, ds: &Dataset) -> Result<f64> {
    let pred = predict_class(&problem.spec, &learner.theta, ds.x())?;
    accuracy(&pred, ds.y())
}

/// Training NLL of every task.
pub fn sequence_nlls(problem: &Problem, seq: &TaskSequence) -> Result<Vec<Nll>> {
    seq.tasks
        .iter()
        .map(|t| task_nll(problem, t.splits.train.x(), t.splits.train.y()))
        .collect()
}

/// Runs `method` over `seq`, evaluating every validation and test dataset
/// after each task.
pub fn execute(problem: &Problem, seq: &TaskSequence, method: Method, seed: u64) -> RunOutcome {
    let mut out = RunOutcome {
        method,
        seed,
        records: Vec::new(),
        val_faa: None,
        test_faa: None,
        learner: None,
        failure: None,
        degenerate_tasks: seq.degenerate_tasks(),
    };
    for &t in &out.degenerate_tasks {
        warn!("task {} has a single training label", t + 1);
    }
    let result = (|| -> Result<Learner> {
        let nlls = sequence_nlls(problem, seq)?;
        let mut learner = Learner::new(problem, method, seed)?;
        for t in 0..nlls.len() {
            learner.step(problem, &nlls[..=t])?;
            for (split, sets) in [(Split::Val, seq.val()), (Split::Test, seq.test())] {
                for (i, ds) in sets.iter().enumerate() {
                    out.records.push(MetricsRecord {
                        method: method.name().into(),
                        hparams: method.hparams(),
                        seed,
                        task_trained: t + 1,
                        dataset_index: i + 1,
                        split,
                        accuracy: evaluate(problem, &learner, ds)?,
                    });
                }
            }
        }
        Ok(learner)
    })();
    match result {
        Ok(learner) => {
            out.val_faa = faa_from_records(&out.records, Split::Val).ok();
            out.test_faa = faa_from_records(&out.records, Split::Test).ok();
            out.learner = Some(learner);
        }
        Err(e) => out.failure = Some(e),
    }
    out
}

fn slug(method: &Method) -> String {
    let h = method.hparams();
    if h.is_empty() {
        "default".into()
    } else {
        h.replace(';', "_").replace('=', "-")
    }
}

/// Records path of one run, relative to the output directory.
pub fn records_path(experiment: &str, method: &Method, seed: u64) -> PathBuf {
    Path::new(experiment)
        .join(method.name())
        .join(format!("{}_seed{seed}.csv", slug(method)))
}

/// Writes a run's records, final state and (if it failed) its error, and
/// returns its index line.
pub fn persist(out_dir: &Path, experiment: &str, outcome: &RunOutcome, role: &str) -> Result<IndexEntry> {
    let rel = records_path(experiment, &outcome.method, outcome.seed);
    let path = out_dir.join(&rel);
    write_records(&path, &outcome.records)?;
    if let Some(learner) = &outcome.learner {
        let state = path.with_extension("state.json");
        let json = serde_json::to_string(learner)?;
        fs::write(&state, json).map_err(|e| Error::io(&state, e))?;
    }
    if let Some(err) = &outcome.failure {
        let err_path = path.with_extension("error.txt");
        fs::write(&err_path, format!("{err}\n")).map_err(|e| Error::io(&err_path, e))?;
    }
    Ok(IndexEntry {
        experiment: experiment.into(),
        method: outcome.method.name().into(),
        hparams: outcome.method.hparams(),
        seed: outcome.seed,
        role: if outcome.is_ok() { role.into() } else { "error".into() },
        val_faa: outcome.val_faa,
        test_faa: outcome.test_faa,
        records: rel.to_string_lossy().replace('\\', "/"),
    })
}

/// Builds the sequence and model context, validating the method first.
pub fn prepare(cfg: &ExperimentConfig, methods: &[Method], seed: u64) -> Result<(TaskSequence, Problem)> {
    let seq = cfg.build_sequence(seed)?;
    let problem = cfg.problem(&seq)?;
    for m in methods {
        cfg.check_method(m, &problem)?;
    }
    Ok((seq, problem))
}

/// One experiment with the configured method, persisted under the output
/// directory. A mid-run failure still writes the partial records.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunOutcome> {
    let method = cfg
        .method
        .ok_or_else(|| Error::Config("run needs a [method] section".into()))?;
    let (seq, problem) = prepare(cfg, &[method], seed)?;
    info!("running {} ({}) on {} tasks", method.name(), method.hparams(), seq.len());
    let mut outcome = execute(&problem, &seq, method, seed);
    let entry = persist(out_dir, &cfg.name, &outcome, "run")?;
    append_index(out_dir, &[entry])?;
    match outcome.failure.take() {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

/// Index of the best validation FAA; ties go to the earliest cell and
/// failed cells (`None`) never win.
pub fn select_best(val_faas: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in val_faas.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug)]
pub struct TuneOutcome {
    pub method: String,
    pub cells: Vec<RunOutcome>,
    pub best: usize,
}

impl TuneOutcome {
    pub fn winner(&self) -> &RunOutcome {
        &self.cells[self.best]
    }
}

/// Runs every grid cell of `name` concurrently and keeps the one with the
/// best validation FAA.
pub fn grid_search_in(
    problem: &Problem,
    seq: &TaskSequence,
    cells: &[Method],
    seed: u64,
) -> Result<(Vec<RunOutcome>, usize)> {
    if cells.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let outcomes: Vec<RunOutcome> = cells
        .par_iter()
        .map(|&m| execute(problem, seq, m, seed))
        .collect();
    let faas: Vec<Option<f64>> = outcomes.iter().map(|o| o.val_faa).collect();
    let best = select_best(&faas).ok_or_else(|| {
        let first = outcomes
            .iter()
            .find_map(|o| o.failure.as_ref())
            .map_or_else(String::new, |e| format!(": {e}"));
        Error::Invalid(format!("every grid cell failed{first}"))
    })?;
    Ok((outcomes, best))
}

/// Grid search for one method name, persisted with a per-method summary.
pub fn grid_search(cfg: &ExperimentConfig, name: &str, seed: u64, out_dir: &Path) -> Result<TuneOutcome> {
    let cells = cfg.grid(name)?;
    let (seq, problem) = prepare(cfg, &cells, seed)?;
    info!("tuning {name}: {} cells", cells.len());
    let (outcomes, best) = grid_search_in(&problem, &seq, &cells, seed)?;
    let mut entries = Vec::with_capacity(outcomes.len() + 1);
    for o in &outcomes {
        entries.push(persist(out_dir, &cfg.name, o, "cell")?);
    }
    let mut winner = entries[best].clone();
    winner.role = "best".into();
    entries.push(winner);
    write_tune_summary(out_dir, &cfg.name, name, seed, &outcomes, best)?;
    append_index(out_dir, &entries)?;
    Ok(TuneOutcome {
        method: name.into(),
        cells: outcomes,
        best,
    })
}

fn write_tune_summary(
    out_dir: &Path,
    experiment: &str,
    name: &str,
    seed: u64,
    outcomes: &[RunOutcome],
    best: usize,
) -> Result<()> {
    let path = out_dir
        .join(experiment)
        .join(name)
        .join(format!("tune_seed{seed}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "hparams", "seed", "val_faa", "test_faa", "selected"])?;
    for (i, o) in outcomes.iter().enumerate() {
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        w.write_record([
            o.method.name().to_string(),
            o.method.hparams(),
            seed.to_string(),
            fmt(o.val_faa),
            fmt(o.test_faa),
            (i == best).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Grid search over every method the config lists, one after another.
pub fn tune(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<Vec<TuneOutcome>> {
    cfg.tune_methods()?
        .iter()
        .map(|name| grid_search(cfg, name, seed, out_dir))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_best_takes_unique_maximum_and_earliest_tie() {
        assert_eq!(select_best(&[Some(0.2), Some(0.9), Some(0.5)]), Some(1));
        assert_eq!(select_best(&[Some(0.5), Some(0.7), Some(0.7)]), Some(1));
        assert_eq!(select_best(&[None, Some(0.1)]), Some(1));
        assert_eq!(select_best(&[None, None]), None);
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn slugs_are_file_safe() {
        let p = records_path("iris", &Method::Si { lambda: 10.0, xi: 0.1 }, 2);
        assert_eq!(p, Path::new("iris/si/lambda-10_xi-0.1_seed2.csv"));
        assert_eq!(
            records_path("iris", &Method::Joint, 0),
            Path::new("iris/joint/default_seed0.csv")
        );
    }
}
