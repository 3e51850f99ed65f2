//! `train`, `train-mtl` and `transfer-init`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;

use hsln::corpus::{parse_fraction, split_folds, truncate_fraction, Dataset, FoldPlan, Splits};
use hsln::embeddings::{EmbeddingMode, EmbeddingProvider, PrecomputedStore, Vocabulary};
use hsln::metrics::{report, MetricsRecord};
use hsln::model::{PreparedDoc, TaskSpec};
use hsln::relatedness::{predict_records, write_predictions, PredictionRecord};
use hsln::trainer::{derive_seed, evaluate, train_tasks, EpochRecord, TaskData, TrainOutcome};
use hsln::transfer::{build_multitask, init_transfer, InitMode, TaskGraph};
use hsln::{checkpoint, Model32};

use crate::config::{ExperimentConfig, Mode, TaskConfig};
use crate::error::CliError;
use crate::io::{load_dataset, write_json};

enum Source {
    Folded { full: Dataset, plan: FoldPlan },
    Fixed(Splits),
}

struct Task {
    cfg: TaskConfig,
    source: Source,
}

impl Task {
    fn name(&self) -> &str {
        match &self.source {
            Source::Folded { full, .. } => &full.name,
            Source::Fixed(s) => &s.train.name,
        }
    }

    fn spec(&self) -> TaskSpec {
        match &self.source {
            Source::Folded { full, .. } => TaskSpec::from_dataset(full),
            Source::Fixed(s) => TaskSpec::from_dataset(&s.train),
        }
    }

    /// Splits for run `run`: fold `run mod k`, or the fixed splits; the
    /// training part truncated if configured.
    fn splits(&self, run: usize, seed: u64) -> Result<Splits, CliError> {
        let mut s = match &self.source {
            Source::Folded { full, plan } => plan.split(full, run % plan.k)?,
            Source::Fixed(s) => s.clone(),
        };
        if let Some(f) = &self.cfg.train_fraction {
            s.train = truncate_fraction(&s.train, parse_fraction(f)?, derive_seed(seed, run as u64, 0x7))?;
        }
        Ok(s)
    }
}

fn load_tasks(cfg: &ExperimentConfig) -> Result<Vec<Task>, CliError> {
    let mut tasks: Vec<Task> = Vec::new();
    for t in &cfg.tasks {
        let source = match (&t.data, &t.train, &t.val, &t.test) {
            (Some(data), ..) => {
                let full = load_dataset(data)?;
                let plan = split_folds(&full, t.folds.unwrap_or(10), cfg.train.seed)?;
                Source::Folded { full, plan }
            }
            (None, Some(tr), Some(va), Some(te)) => {
                let (train, val, test) = (load_dataset(tr)?, load_dataset(va)?, load_dataset(te)?);
                for other in [&val, &test] {
                    if other.name != train.name || other.scheme != train.scheme || other.text_type != train.text_type {
                        return Err(CliError::config(format!("split files of {} disagree on name, scheme or text type", train.name)));
                    }
                }
                Source::Fixed(Splits { train, val, test })
            }
            _ => return Err(CliError::config("incomplete task data")),
        };
        let task = Task { cfg: t.clone(), source };
        if tasks.iter().any(|x| x.name() == task.name()) {
            return Err(CliError::config(format!("dataset {} appears twice", task.name())));
        }
        tasks.push(task);
    }
    if let Some(sharing) = cfg.mode.sharing() {
        // Surface SHO scheme mismatches before any training.
        let specs: Vec<TaskSpec> = tasks.iter().map(Task::spec).collect();
        build_multitask::<f32>(
            hsln::encoder::ModelDims { d_w: 1, d_lstm: 1, d_u: 1, r: 1 },
            &specs,
            sharing,
            EmbeddingProvider::HashingRandom { d_w: 1, seed: 0 },
            0,
        )?;
    }
    Ok(tasks)
}

fn load_stores(cfg: &ExperimentConfig, tasks: &[Task]) -> Result<Arc<HashMap<String, PrecomputedStore>>, CliError> {
    let mut stores = HashMap::new();
    for t in tasks {
        if let Some(p) = &t.cfg.embeddings {
            let s = PrecomputedStore::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            if s.d_w() != cfg.embeddings.d_w {
                return Err(CliError::config(format!("{} has width {}, config says {}", p.display(), s.d_w(), cfg.embeddings.d_w)));
            }
            stores.insert(t.name().to_string(), s);
        }
    }
    Ok(Arc::new(stores))
}

fn provider(
    cfg: &ExperimentConfig,
    stores: &Arc<HashMap<String, PrecomputedStore>>,
    train_sets: &[&Dataset],
    seed: u64,
) -> EmbeddingProvider<f32> {
    let e = &cfg.embeddings;
    match e.mode {
        EmbeddingMode::PrecomputedFile => EmbeddingProvider::PrecomputedFile { d_w: e.d_w, stores: stores.clone() },
        EmbeddingMode::HashingRandom => EmbeddingProvider::HashingRandom { d_w: e.d_w, seed: e.seed },
        EmbeddingMode::TrainableLookup => {
            let texts = train_sets.iter().flat_map(|ds| ds.documents.iter().flat_map(|d| d.sentences.iter().map(|s| s.text.as_str())));
            EmbeddingProvider::trainable(Vocabulary::build(texts, cfg.train.max_tokens), e.d_w, derive_seed(e.seed, seed, 0))
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    best_epoch: Option<usize>,
    weighted_f1: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct TaskSummary {
    runs: Vec<RunSummary>,
    mean_weighted_f1: f64,
    mean_accuracy: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    mode: Mode,
    seed: u64,
    runs: usize,
    tasks: IndexMap<String, TaskSummary>,
}

pub fn output_root(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| {
            std::env::var_os("HSLN_OUTPUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(&cfg.name)
        })
}

fn write_epochs(path: &Path, log: &[EpochRecord]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

struct RunArtifacts {
    per_task: Vec<(usize, RunSummary)>,
}

/// Evaluates every trained task on its test split, writes artifacts and
/// cross-task predictions on every test split of the run.
fn finish_run(
    dir: &Path,
    run: usize,
    outcome: &TrainOutcome<f32>,
    task_index: &[usize],
    tasks: &[Task],
    splits: &[Splits],
    tests: &[Vec<PreparedDoc<f32>>],
    final_model: Option<&Model32>,
) -> Result<RunArtifacts, CliError> {
    fs::create_dir_all(dir)?;
    write_epochs(&dir.join("epochs.jsonl"), &outcome.log)?;
    if let Some(m) = final_model {
        checkpoint::save_file(m, &dir.join("model.ckpt"))?;
        fs::write(dir.join("task_graph.json"), TaskGraph::of(m).to_json()?)?;
    }
    let mut metrics = Vec::new();
    let mut predictions: Vec<PredictionRecord> = Vec::new();
    let mut per_task = Vec::new();
    for (o, &ti) in outcome.tasks.iter().zip(task_index) {
        let model = &o.model;
        checkpoint::save_file(model, &dir.join(format!("{}.ckpt", o.task_id)))?;
        if final_model.is_none() {
            fs::write(dir.join("task_graph.json"), TaskGraph::of(model).to_json()?)?;
        }
        let (cm, _) = evaluate(model, 0, &tests[ti])?;
        let r = report(&cm)?;
        let (fold, restart) = match &tasks[ti].source {
            Source::Folded { plan, .. } => (Some(run % plan.k), None),
            Source::Fixed(_) => (None, Some(run)),
        };
        metrics.push(MetricsRecord::new(&o.task_id, fold, restart, tasks[ti].spec().scheme.classes(), &r));
        per_task.push((ti, RunSummary { run, best_epoch: o.best_epoch, weighted_f1: r.weighted_f1, accuracy: r.accuracy }));
        for (split, docs) in splits.iter().zip(tests) {
            predictions.extend(predict_records(model, 0, &split.test, docs)?);
        }
    }
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_predictions(&predictions, std::io::BufWriter::new(fs::File::create(dir.join("predictions.csv"))?))?;
    Ok(RunArtifacts { per_task })
}

/// Runs the configured protocol and writes `summary.json` under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, multitask: bool) -> Result<PathBuf, CliError> {
    cfg.validate(multitask)?;
    let tasks = load_tasks(cfg)?;
    let stores = load_stores(cfg, &tasks)?;
    let source: Option<Model32> = match &cfg.source_checkpoint {
        Some(p) => Some(checkpoint::load_file(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let folded: Vec<usize> = tasks
        .iter()
        .filter_map(|t| match &t.source {
            Source::Folded { plan, .. } => Some(plan.k),
            Source::Fixed(_) => None,
        })
        .collect();
    let runs = folded.iter().copied().max().unwrap_or(cfg.restarts);
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;

    let mut results: Vec<Vec<RunSummary>> = (0..tasks.len()).map(|_| Vec::new()).collect();
    for run in 0..runs {
        let seed = derive_seed(cfg.train.seed, run as u64, 0);
        let train_cfg = hsln::trainer::TrainConfig { seed, ..cfg.train.clone() };
        let splits: Vec<Splits> = tasks.iter().map(|t| t.splits(run, cfg.train.seed)).collect::<Result<_, _>>()?;
        let run_dir = out.join(format!("run{run}"));

        if let Some(sharing) = cfg.mode.sharing() {
            let specs: Vec<TaskSpec> = tasks.iter().map(Task::spec).collect();
            let trains: Vec<&Dataset> = splits.iter().map(|s| &s.train).collect();
            let emb = provider(cfg, &stores, &trains, seed);
            let model = build_multitask(cfg.dims, &specs, sharing, emb, seed)?;
            let prep = |ds: &Dataset| model.prepare(ds, cfg.train.max_tokens);
            let train: Vec<_> = splits.iter().map(|s| prep(&s.train)).collect::<Result<_, _>>()?;
            let val: Vec<_> = splits.iter().map(|s| prep(&s.val)).collect::<Result<_, _>>()?;
            let test: Vec<_> = splits.iter().map(|s| prep(&s.test)).collect::<Result<_, _>>()?;
            let data: Vec<TaskData<'_, f32>> =
                (0..tasks.len()).map(|i| TaskData { task: i, train: &train[i], val: &val[i] }).collect();
            let outcome = train_tasks(model, &data, &train_cfg)?;
            let idx: Vec<usize> = (0..tasks.len()).collect();
            let art = finish_run(&run_dir, run, &outcome, &idx, &tasks, &splits, &test, Some(&outcome.final_model))?;
            for (ti, s) in art.per_task {
                results[ti].push(s);
            }
        } else {
            for (ti, task) in tasks.iter().enumerate() {
                let emb = provider(cfg, &stores, &[&splits[ti].train], seed);
                let mut model = Model32::single_task(cfg.dims, task.spec(), emb, seed)?;
                if let Some(src) = &source {
                    let mode = if cfg.mode == Mode::Init1 { InitMode::Init1 } else { InitMode::Init2 };
                    model = init_transfer(src, model, mode)?;
                }
                let prep = |ds: &Dataset| model.prepare(ds, cfg.train.max_tokens);
                let (train, val) = (prep(&splits[ti].train)?, prep(&splits[ti].val)?);
                let test: Vec<_> = splits.iter().map(|s| prep(&s.test)).collect::<Result<_, _>>()?;
                let outcome = train_tasks(model.clone(), &[TaskData { task: 0, train: &train, val: &val }], &train_cfg)?;
                let art = finish_run(&run_dir.join(task.name()), run, &outcome, &[ti], &tasks, &splits, &test, None)?;
                for (ti, s) in art.per_task {
                    results[ti].push(s);
                }
            }
        }
    }

    let summary = Summary {
        name: &cfg.name,
        mode: cfg.mode,
        seed: cfg.train.seed,
        runs,
        tasks: tasks
            .iter()
            .zip(results)
            .map(|(t, runs)| {
                let n = runs.len().max(1) as f64;
                let mean_weighted_f1 = runs.iter().map(|r| r.weighted_f1).sum::<f64>() / n;
                let mean_accuracy = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
                (t.name().to_string(), TaskSummary { runs, mean_weighted_f1, mean_accuracy })
            })
            .collect(),
    };
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    Ok(path)
}

/// Builds a fresh model for the config's first task and initializes it from `source`.
pub fn transfer_init(cfg: &ExperimentConfig, source: &Path, mode: InitMode, out: &Path) -> Result<(), CliError> {
    let tasks = load_tasks(cfg)?;
    let stores = load_stores(cfg, &tasks)?;
    let task = tasks.first().ok_or_else(|| CliError::config("no tasks configured"))?;
    let src: Model32 = checkpoint::load_file(source).map_err(|e| CliError::input(format!("{}: {e}", source.display())))?;
    let splits = task.splits(0, cfg.train.seed)?;
    let seed = derive_seed(cfg.train.seed, 0, 0);
    let emb = provider(cfg, &stores, &[&splits.train], seed);
    let target = Model32::single_task(cfg.dims, task.spec(), emb, seed)?;
    let model = init_transfer(&src, target, mode)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    checkpoint::save_file(&model, out)?;
    Ok(())
}
