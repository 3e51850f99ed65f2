//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hsln::corpus::parse_fraction;
use hsln::embeddings::EmbeddingMode;
use hsln::encoder::ModelDims;
use hsln::model::SharingMode;
use hsln::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Init1,
    Init2,
    MultAll,
    MultGrp,
    MultAllSho,
    MultGrpSho,
}

impl Mode {
    pub fn sharing(self) -> Option<SharingMode> {
        match self {
            Mode::MultAll => Some(SharingMode::MultAll),
            Mode::MultGrp => Some(SharingMode::MultGrp),
            Mode::MultAllSho => Some(SharingMode::MultAllSho),
            Mode::MultGrpSho => Some(SharingMode::MultGrpSho),
            _ => None,
        }
    }
}

/// Either one file cross-validated over `folds`, or fixed split files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub val: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Training-set truncation such as `"1/20"`.
    #[serde(default)]
    pub train_fraction: Option<String>,
    /// Precomputed store for this dataset.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub mode: EmbeddingMode,
    pub d_w: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { mode: EmbeddingMode::TrainableLookup, d_w: 32, seed: 0 }
    }
}

fn default_dims() -> ModelDims {
    ModelDims { d_w: 32, d_lstm: 32, d_u: 16, r: 4 }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default = "default_dims")]
    pub dims: ModelDims,
    #[serde(default)]
    pub train: TrainConfig,
    /// Repetitions for fixed-split datasets.
    #[serde(default = "one")]
    pub restarts: usize,
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        for t in &mut cfg.tasks {
            fix(&mut t.data);
            fix(&mut t.train);
            fix(&mut t.val);
            fix(&mut t.test);
            fix(&mut t.embeddings);
        }
        fix(&mut cfg.source_checkpoint);
        Ok(cfg)
    }

    /// Checks everything that does not need the data files.
    pub fn validate(&self, multitask: bool) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.tasks.is_empty() {
            return bad("no tasks configured".into());
        }
        if multitask != self.mode.sharing().is_some() {
            let cmd = if multitask { "train-mtl" } else { "train" };
            return bad(format!("mode {:?} cannot run under `{cmd}`", self.mode));
        }
        if matches!(self.mode, Mode::Init1 | Mode::Init2) && self.source_checkpoint.is_none() {
            return bad("init modes need source_checkpoint".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if self.embeddings.d_w != self.dims.d_w {
            return bad(format!("embeddings.d_w = {} but dims.d_w = {}", self.embeddings.d_w, self.dims.d_w));
        }
        self.dims.validate().or_else(|e| bad(e.to_string()))?;
        self.train.validate().or_else(|e| bad(e.to_string()))?;
        for (i, t) in self.tasks.iter().enumerate() {
            let fixed = t.train.is_some() || t.val.is_some() || t.test.is_some();
            match (&t.data, fixed) {
                (Some(_), false) => {
                    if t.folds.is_none_or(|k| k < 3) {
                        return bad(format!("task {i}: `data` needs `folds` >= 3"));
                    }
                }
                (None, true) if t.train.is_some() && t.val.is_some() && t.test.is_some() => {
                    if t.folds.is_some() {
                        return bad(format!("task {i}: `folds` only applies to `data`"));
                    }
                }
                _ => return bad(format!("task {i}: give either `data` + `folds` or all of `train`, `val`, `test`")),
            }
            if let Some(f) = &t.train_fraction {
                if let Err(e) = parse_fraction(f) {
                    return bad(format!("task {i}: {e}"));
                }
            }
            if (self.embeddings.mode == EmbeddingMode::PrecomputedFile) != t.embeddings.is_some() {
                return bad(format!("task {i}: `embeddings` store is required exactly for precomputed_file mode"));
            }
        }
        Ok(())
    }
}
