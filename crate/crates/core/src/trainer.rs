//! Batching, the epoch loop and best-epoch model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::metrics::{confusion, report, ConfusionMatrix, MetricsReport};
use crate::model::{Model, PreparedDoc};
use crate::optim::{clip_global_norm, effective_lr, AdamW};
use crate::scalar::Scalar;
use crate::transfer::proportional_schedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub batch_sentence_cap: usize,
    pub max_tokens: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            weight_decay: 0.01,
            lr_decay_per_epoch: 0.9,
            epochs: 20,
            batch_sentence_cap: 32,
            max_tokens: 128,
            dropout: 0.5,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_decay_per_epoch > 0.0) {
            return bad("lr_decay_per_epoch must be positive");
        }
        if self.batch_sentence_cap == 0 || self.max_tokens == 0 {
            return bad("batch_sentence_cap and max_tokens must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Indices of the documents packed into one mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub documents: Vec<usize>,
}

/// Greedy packing in the given order; a document larger than `cap` gets its own batch.
pub fn pack_batches(order: &[usize], sizes: &[usize], cap: usize) -> Vec<Batch> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut filled = 0;
    for &doc in order {
        let n = sizes[doc];
        if !current.is_empty() && filled + n > cap {
            batches.push(Batch { documents: std::mem::take(&mut current) });
            filled = 0;
        }
        current.push(doc);
        filled += n;
    }
    if !current.is_empty() {
        batches.push(Batch { documents: current });
    }
    batches
}

/// Shuffles documents by `seed`, then packs them without splitting any document.
pub fn make_batches(sizes: &[usize], cap: usize, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pack_batches(&order, sizes, cap.max(1))
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decodes every document and tallies the confusion matrix.
pub fn evaluate<T: Scalar>(model: &Model<T>, task: usize, docs: &[PreparedDoc<T>]) -> Result<(ConfusionMatrix, Vec<Vec<usize>>)> {
    let n = model.tasks()[task].spec.scheme.len();
    let mut cm = ConfusionMatrix::new(n);
    let mut preds = Vec::with_capacity(docs.len());
    for d in docs {
        let p = model.predict(task, d)?;
        cm.merge(&confusion(&d.labels, &p, n)?);
        preds.push(p);
    }
    Ok((cm, preds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: String,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

/// Training and validation documents of one task.
pub struct TaskData<'a, T> {
    pub task: usize,
    pub train: &'a [PreparedDoc<T>],
    pub val: &'a [PreparedDoc<T>],
}

/// Best-validation snapshot of one task.
#[derive(Clone, Debug)]
pub struct TaskOutcome<T> {
    pub task_id: String,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val: Option<MetricsReport>,
    pub model: Model<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub tasks: Vec<TaskOutcome<T>>,
    pub log: Vec<EpochRecord>,
    pub final_model: Model<T>,
}

/// One optimization step on a batch of one task. Returns the mean batch loss.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    task: usize,
    docs: &[&PreparedDoc<T>],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut grads = model.new_grads(task);
    let scale = T::of(1.0 / docs.len() as f64);
    let dropout = Dropout { rate: cfg.dropout };
    let mut loss = 0.0;
    for d in docs {
        loss += model.loss_and_grad(task, d, dropout, Some(rng), scale, &mut grads)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteGradient("loss".into()));
    }
    if let Some(c) = cfg.clip_norm {
        clip_global_norm(&mut grads, c);
    }
    let grad_arrays = grads.arrays();
    opt.step(model.task_arrays_mut(task), &grad_arrays, lr, cfg.weight_decay)?;
    Ok(loss / docs.len() as f64)
}

/// Trains the given tasks together, interleaving their batches by the
/// proportional schedule and keeping each task's best-validation snapshot.
pub fn train_tasks<T: Scalar>(mut model: Model<T>, data: &[TaskData<'_, T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    for td in data {
        if td.task >= model.tasks().len() {
            return Err(Error::UnknownTask(format!("#{}", td.task)));
        }
        if td.train.is_empty() || td.val.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task {} needs non-empty train and validation splits",
                model.tasks()[td.task].spec.task_id
            )));
        }
    }
    let mut opt = AdamW::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xD80, 0));
    let mut best: Vec<TaskOutcome<T>> = data
        .iter()
        .map(|td| TaskOutcome {
            task_id: model.tasks()[td.task].spec.task_id.clone(),
            best_epoch: None,
            best_val: None,
            model: model.task_view(td.task),
        })
        .collect();
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = effective_lr(cfg.lr, cfg.lr_decay_per_epoch, epoch);
        let batches: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, td)| {
                let sizes: Vec<usize> = td.train.iter().map(PreparedDoc::len).collect();
                make_batches(&sizes, cfg.batch_sentence_cap, derive_seed(cfg.seed, epoch as u64 + 1, i as u64))
            })
            .collect();
        let counts: Vec<usize> = batches.iter().map(Vec::len).collect();
        let schedule = proportional_schedule(&counts, derive_seed(cfg.seed, epoch as u64 + 1, u64::MAX));

        let mut loss_sum = vec![0.0; data.len()];
        for (i, b) in schedule {
            let td = &data[i];
            let docs: Vec<&PreparedDoc<T>> = batches[i][b].documents.iter().map(|&d| &td.train[d]).collect();
            loss_sum[i] += train_step(&mut model, &mut opt, td.task, &docs, cfg, lr, &mut rng)?;
        }

        for (i, td) in data.iter().enumerate() {
            let (cm, _) = evaluate(&model, td.task, td.val)?;
            let r = report(&cm)?;
            log.push(EpochRecord {
                epoch,
                task: best[i].task_id.clone(),
                train_loss: loss_sum[i] / counts[i] as f64,
                val_weighted_f1: r.weighted_f1,
                val_accuracy: r.accuracy,
                lr,
            });
            let improved = best[i].best_val.as_ref().is_none_or(|b| r.weighted_f1 > b.weighted_f1);
            if improved {
                best[i].best_epoch = Some(epoch);
                best[i].best_val = Some(r);
                best[i].model = model.task_view(td.task);
            }
        }
    }
    Ok(TrainOutcome { tasks: best, log, final_model: model })
}

/// Single-task training of task 0 with best-epoch selection on validation weighted F1.
pub fn train_single_task<T: Scalar>(
    model: Model<T>,
    train: &[PreparedDoc<T>],
    val: &[PreparedDoc<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_tasks(model, &[TaskData { task: 0, train, val }], cfg)
}
