//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "iris_sr"
//! seed = 0
//! out_dir = "results"
//!
//! [sequence]
//! source = "iris"          # or: file = "features.csv"
//! mode = "ci"              # or "di" with grouping = [0, 1, ...]
//! classes_per_task = 1
//!
//! [model]
//! hidden = []              # softmax regression
//!
//! [method]
//! name = "aqc"
//! lambda = 100.0
//!
//! [train]
//! epochs = 100
//! batch_size = 16
//! base_lr = 0.1
//!
//! [tune]
//! methods = ["finetune", "joint", "aqc", "ewc", "si", "nc"]
//! ```
//!
//! Unknown keys anywhere are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::{ConsolidatorConfig, Method, Problem};
use crate::nn::{Head, ModelSpec};
use crate::objectives::LikelihoodKind;
use crate::optim::TrainConfig;
use crate::tasks::{
    load_builtin, load_feature_file, relabel_binary, split_by_class, split_train_val_test, Mode,
    TaskSequence,
};

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "SEQMAP_OUT_DIR";

fn default_name() -> String {
    "experiment".into()
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_classes_per_task() -> usize {
    1
}
fn default_max_hessian_params() -> usize {
    5000
}
fn default_resolution() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    /// Built-in dataset name.
    #[serde(default)]
    pub source: Option<String>,
    /// Feature file holding the whole dataset.
    #[serde(default)]
    pub file: Option<PathBuf>,
    pub mode: Mode,
    #[serde(default = "default_classes_per_task")]
    pub classes_per_task: usize,
    /// Class → binary group, required for domain-incremental sequences.
    #[serde(default)]
    pub grouping: Option<Vec<usize>>,
    #[serde(default)]
    pub standardize: bool,
    /// Seed of the train/validation/test split; the run seed if unset.
    #[serde(default)]
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Defaults to categorical for class-incremental and Bernoulli for
    /// domain-incremental sequences.
    #[serde(default)]
    pub likelihood: Option<LikelihoodKind>,
    /// Largest parameter count for which exact Hessians are computed.
    #[serde(default = "default_max_hessian_params")]
    pub max_hessian_params: usize,
    /// Mini-batch size for Hessian accumulation; the training batch size if unset.
    #[serde(default)]
    pub hessian_batch_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            likelihood: None,
            max_hessian_params: default_max_hessian_params(),
            hessian_batch_size: None,
        }
    }
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1000.0, 10000.0]
}
fn default_xis() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_radii() -> Vec<f64> {
    vec![1.0, 10.0, 100.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    /// Methods to tune; the `[method]` section's method if empty.
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_xis")]
    pub xi: Vec<f64>,
    #[serde(default = "default_radii")]
    pub radius: Vec<f64>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            methods: Vec::new(),
            lambda: default_lambdas(),
            xi: default_xis(),
            radius: default_radii(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VizConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// `[x_min, x_max, y_min, y_max]`; data range padded by 10% if unset.
    #[serde(default)]
    pub bounds: Option<[f64; 4]>,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            bounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub method: Option<Method>,
    pub train: TrainConfig,
    #[serde(default)]
    pub consolidator: ConsolidatorConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub viz: VizConfig,
    /// Directory relative feature-file paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sequence;
        match (&s.source, &s.file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("sequence: give either source or file, not both".into()))
            }
            (None, None) => return Err(Error::Config("sequence: source or file is required".into())),
            _ => {}
        }
        if s.mode == Mode::DomainIncremental && s.grouping.is_none() {
            return Err(Error::Config("sequence: domain-incremental mode needs a grouping".into()));
        }
        if s.mode == Mode::ClassIncremental && s.grouping.is_some() {
            return Err(Error::Config("sequence: grouping only applies to mode \"di\"".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(Error::Config(format!("name {:?} is not usable in file names", self.name)));
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.consolidator
            .validate()
            .map_err(|e| Error::Config(format!("consolidator: {e}")))?;
        if let Some(m) = &self.method {
            m.validate().map_err(|e| Error::Config(format!("method: {e}")))?;
        }
        for name in &self.tune.methods {
            if !METHOD_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "tune: unknown method {name:?} (expected one of {METHOD_NAMES:?})"
                )));
            }
        }
        for (key, grid) in [("lambda", &self.tune.lambda), ("xi", &self.tune.xi), ("radius", &self.tune.radius)] {
            if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("tune: {key} values must be positive")));
            }
        }
        if self.viz.resolution < 2 {
            return Err(Error::Config("viz: resolution must be at least 2".into()));
        }
        Ok(())
    }

    /// Output directory: `SEQMAP_OUT_DIR` if set, else `out_dir`.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.clone(),
        }
    }

    /// Loads, splits and partitions the configured data.
    pub fn build_sequence(&self, seed: u64) -> Result<TaskSequence> {
        let s = &self.sequence;
        let ds = match (&s.source, &s.file) {
            (Some(name), _) => load_builtin(name)?,
            (None, Some(file)) => {
                let path = if file.is_relative() {
                    self.base_dir.join(file)
                } else {
                    file.clone()
                };
                load_feature_file(path)?
            }
            (None, None) => return Err(Error::Config("sequence: no data source".into())),
        };
        let mut splits = split_train_val_test(&ds, s.split_seed.unwrap_or(seed))?;
        if s.standardize {
            splits = splits.standardized()?;
        }
        let seq = split_by_class(&splits, s.classes_per_task)?;
        match (s.mode, &s.grouping) {
            (Mode::DomainIncremental, Some(g)) => relabel_binary(&seq, g),
            (Mode::DomainIncremental, None) => {
                Err(Error::Config("domain-incremental mode needs a grouping".into()))
            }
            (Mode::ClassIncremental, _) => Ok(seq),
        }
    }

    /// Model and training context for `seq`.
    pub fn problem(&self, seq: &TaskSequence) -> Result<Problem> {
        let head = seq.head();
        let likelihood = match (self.model.likelihood, head) {
            (None, Head::Bernoulli) => LikelihoodKind::Bernoulli,
            (None, _) => LikelihoodKind::Categorical,
            (Some(l), _) => l,
        };
        let spec = ModelSpec::new(seq.input_dim(), self.model.hidden.clone(), seq.output_dim(), head)?;
        let mut problem = Problem::new(spec, likelihood, self.train.clone());
        problem.hessian_batch_size = self.model.hessian_batch_size;
        problem.consolidator = self.consolidator.clone();
        Ok(problem)
    }

    /// Rejects methods whose cost the model size rules out.
    pub fn check_method(&self, method: &Method, problem: &Problem) -> Result<()> {
        if matches!(method, Method::Aqc { .. }) && problem.dim() > self.model.max_hessian_params {
            return Err(Error::Config(format!(
                "AQC needs exact Hessians; the model has {} parameters, above max_hessian_params = {}",
                problem.dim(),
                self.model.max_hessian_params
            )));
        }
        Ok(())
    }

    /// Method names to tune, in order.
    pub fn tune_methods(&self) -> Result<Vec<String>> {
        if !self.tune.methods.is_empty() {
            return Ok(self.tune.methods.clone());
        }
        match &self.method {
            Some(m) => Ok(vec![m.name().to_string()]),
            None => Err(Error::Config("tune: no methods listed and no [method] section".into())),
        }
    }

    /// Every cell of the grid for `name`, in declared order (`lambda` varies slowest).
    pub fn grid(&self, name: &str) -> Result<Vec<Method>> {
        let t = &self.tune;
        let cells: Vec<Method> = match name {
            "finetune" => vec![Method::Finetune],
            "joint" => vec![Method::Joint],
            "aqc" => t.lambda.iter().map(|&lambda| Method::Aqc { lambda }).collect(),
            "ewc" => t.lambda.iter().map(|&lambda| Method::Ewc { lambda }).collect(),
            "si" => t
                .lambda
                .iter()
                .flat_map(|&lambda| t.xi.iter().map(move |&xi| Method::Si { lambda, xi }))
                .collect(),
            "nc" => t
                .lambda
                .iter()
                .flat_map(|&lambda| t.radius.iter().map(move |&radius| Method::Nc { lambda, radius }))
                .collect(),
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        };
        if cells.is_empty() {
            return Err(Error::Config(format!("tune: empty grid for {name}")));
        }
        Ok(cells)
    }
}

pub const METHOD_NAMES: [&str; 6] = ["finetune", "joint", "aqc", "ewc", "si", "nc"];
