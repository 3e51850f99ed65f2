//! Sequential transfer between tasks and multi-task sharing topologies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TextType;
use crate::embeddings::EmbeddingProvider;
use crate::encoder::{ContextEncoder, ModelDims, OutputLayer, SentenceEncoder};
use crate::error::{Error, Result};
use crate::model::{ContextSet, Model, OutputSet, SharingMode, TaskSpec, TaskWiring, CONTEXT_ENCODER, SENTENCE_ENCODER};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{train_tasks, TaskData, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Sentence and context encoders.
    Init1,
    /// Sentence encoder only.
    Init2,
}

fn same_shapes<T: Scalar>(a: &[(&'static str, &Tensor<T>)], b: &[(&'static str, &Tensor<T>)]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((_, x), (_, y))| x.shape() == y.shape())
}

/// Initializes `target` from a trained `source`. The source's first context
/// set is copied into every context set of the target under `Init1`.
pub fn init_transfer<T: Scalar>(source: &Model<T>, mut target: Model<T>, mode: InitMode) -> Result<Model<T>> {
    if mode == InitMode::Init1 {
        let src = &source.contexts().first().ok_or_else(|| Error::DimMismatch(CONTEXT_ENCODER.into()))?.encoder;
        for dst in target.contexts_mut() {
            if !same_shapes(&src.arrays(), &dst.encoder.arrays()) {
                return Err(Error::DimMismatch(CONTEXT_ENCODER.into()));
            }
            dst.encoder = src.clone();
        }
    }
    if !same_shapes(&source.sentence_encoder().arrays(), &target.sentence_encoder().arrays()) {
        return Err(Error::DimMismatch(SENTENCE_ENCODER.into()));
    }
    *target.sentence_encoder_mut() = source.sentence_encoder().clone();
    Ok(target)
}

/// Builds the shared model for `tasks` under `mode`.
///
/// Grouped modes create one set per text type present, abstracts first.
pub fn build_multitask<T: Scalar>(
    dims: ModelDims,
    tasks: &[TaskSpec],
    mode: SharingMode,
    embeddings: EmbeddingProvider<T>,
    seed: u64,
) -> Result<Model<T>> {
    dims.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|u| u.task_id == t.task_id) {
            return Err(Error::InvalidArgument(format!("duplicate task id {}", t.task_id)));
        }
    }
    if mode.shares_output() && tasks.iter().any(|t| t.scheme.classes() != tasks[0].scheme.classes()) {
        return Err(Error::SchemeMismatchForSho);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = SentenceEncoder::new(&dims, &mut rng);

    let groups: Vec<TextType> = [TextType::Abstract, TextType::FullPaper]
        .into_iter()
        .filter(|tt| tasks.iter().any(|t| t.text_type == *tt))
        .collect();
    let group_of = |tt: TextType| groups.iter().position(|g| *g == tt).unwrap_or(0);

    let contexts: Vec<ContextSet<T>> = if mode.groups_by_text_type() {
        groups
            .iter()
            .map(|g| ContextSet { name: format!("{CONTEXT_ENCODER}.{}", g.as_str()), encoder: ContextEncoder::new(&dims, &mut rng) })
            .collect()
    } else {
        vec![ContextSet { name: CONTEXT_ENCODER.into(), encoder: ContextEncoder::new(&dims, &mut rng) }]
    };

    let n_labels = tasks[0].scheme.len();
    let outputs: Vec<OutputSet<T>> = match mode {
        SharingMode::MultAll | SharingMode::MultGrp => tasks
            .iter()
            .map(|t| OutputSet { name: format!("output.{}", t.task_id), layer: OutputLayer::new(&dims, t.scheme.len(), &mut rng) })
            .collect(),
        SharingMode::MultAllSho => vec![OutputSet { name: "output.shared".into(), layer: OutputLayer::new(&dims, n_labels, &mut rng) }],
        SharingMode::MultGrpSho => groups
            .iter()
            .map(|g| OutputSet { name: format!("output.{}", g.as_str()), layer: OutputLayer::new(&dims, n_labels, &mut rng) })
            .collect(),
    };

    let wiring = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let g = group_of(t.text_type);
            let context = if mode.groups_by_text_type() { g } else { 0 };
            let output = match mode {
                SharingMode::MultAll | SharingMode::MultGrp => i,
                SharingMode::MultAllSho => 0,
                SharingMode::MultGrpSho => g,
            };
            TaskWiring { spec: t.clone(), context, output }
        })
        .collect();
    Model::assemble(dims, embeddings, sentence, contexts, outputs, wiring, Some(mode))
}

/// A seeded permutation of every `(task, batch)` pair.
pub fn proportional_schedule(batches_per_task: &[usize], seed: u64) -> Vec<(usize, usize)> {
    let mut s: Vec<(usize, usize)> =
        batches_per_task.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |b| (t, b))).collect();
    s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    s
}

/// Trains every task of a shared model; each step touches only the
/// sentence encoder and the sets wired to the batch's task.
pub fn train_multitask<T: Scalar>(model: Model<T>, data: &[TaskData<'_, T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_tasks(model, data, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraphEntry {
    pub task_id: String,
    pub text_type: TextType,
    pub scheme: String,
    pub classes: Vec<String>,
    pub context: String,
    pub output: String,
}

/// Wiring manifest written next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub sharing: Option<SharingMode>,
    pub sentence_encoder: String,
    pub contexts: Vec<String>,
    pub outputs: Vec<String>,
    pub tasks: Vec<TaskGraphEntry>,
}

impl TaskGraph {
    pub fn of<T: Scalar>(model: &Model<T>) -> Self {
        let contexts: Vec<String> = model.contexts().iter().map(|c| c.name.clone()).collect();
        let outputs: Vec<String> = model.outputs().iter().map(|o| o.name.clone()).collect();
        let tasks = model
            .tasks()
            .iter()
            .map(|w| TaskGraphEntry {
                task_id: w.spec.task_id.clone(),
                text_type: w.spec.text_type,
                scheme: w.spec.scheme.name.clone(),
                classes: w.spec.scheme.classes().to_vec(),
                context: contexts[w.context].clone(),
                output: outputs[w.output].clone(),
            })
            .collect();
        Self { sharing: model.sharing(), sentence_encoder: SENTENCE_ENCODER.into(), contexts, outputs, tasks }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelScheme;

    fn spec(id: &str, tt: TextType, classes: &[&str]) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            text_type: tt,
            scheme: LabelScheme::new(id, classes.iter().map(|s| s.to_string()).collect()).unwrap(),
        }
    }

    fn dims() -> ModelDims {
        ModelDims { d_w: 3, d_lstm: 2, d_u: 2, r: 2 }
    }

    fn four() -> Vec<TaskSpec> {
        vec![
            spec("a1", TextType::Abstract, &["x", "y"]),
            spec("f1", TextType::FullPaper, &["p", "q", "r"]),
            spec("a2", TextType::Abstract, &["x", "z"]),
            spec("f2", TextType::FullPaper, &["u", "v"]),
        ]
    }

    #[test]
    fn set_counts_per_mode() {
        let emb = || EmbeddingProvider::<f64>::HashingRandom { d_w: 3, seed: 1 };
        let all = build_multitask(dims(), &four(), SharingMode::MultAll, emb(), 0).unwrap();
        assert_eq!(all.parameter_set_counts(), (1, 1, 4));
        let grp = build_multitask(dims(), &four(), SharingMode::MultGrp, emb(), 0).unwrap();
        assert_eq!(grp.parameter_set_counts(), (1, 2, 4));
        assert_eq!(grp.tasks()[2].context, 0);
        assert_eq!(grp.tasks()[3].context, 1);
        assert!(matches!(
            build_multitask(dims(), &four(), SharingMode::MultAllSho, emb(), 0),
            Err(Error::SchemeMismatchForSho)
        ));
        let same: Vec<TaskSpec> = four().into_iter().map(|t| spec(&t.task_id, t.text_type, &["g1", "g2"])).collect();
        let sho = build_multitask(dims(), &same, SharingMode::MultAllSho, emb(), 0).unwrap();
        assert_eq!(sho.parameter_set_counts(), (1, 1, 1));
        let gsho = build_multitask(dims(), &same, SharingMode::MultGrpSho, emb(), 0).unwrap();
        assert_eq!(gsho.parameter_set_counts(), (1, 2, 2));
        assert_eq!(gsho.outputs()[1].name, "output.full_paper");
    }

    #[test]
    fn schedule_is_a_permutation_of_the_multiset() {
        let s = proportional_schedule(&[80, 20], 9);
        assert_eq!(s.len(), 100);
        assert_eq!(s.iter().filter(|(t, _)| *t == 0).count(), 80);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..80).map(|b| (0, b)).chain((0..20).map(|b| (1, b))).collect::<Vec<_>>());
        assert_eq!(proportional_schedule(&[80, 20], 9), s);
    }

    #[test]
    fn transfer_copies_only_requested_groups() {
        let emb = || EmbeddingProvider::<f64>::HashingRandom { d_w: 3, seed: 1 };
        let t = spec("a1", TextType::Abstract, &["x", "y"]);
        let src = Model::single_task(dims(), t.clone(), emb(), 1).unwrap();
        let fresh = Model::single_task(dims(), t.clone(), emb(), 2).unwrap();

        let m2 = init_transfer(&src, fresh.clone(), InitMode::Init2).unwrap();
        assert_eq!(m2.sentence_encoder(), src.sentence_encoder());
        assert_ne!(m2.contexts()[0].encoder, src.contexts()[0].encoder);

        let m1 = init_transfer(&src, fresh.clone(), InitMode::Init1).unwrap();
        assert_eq!(m1.contexts()[0].encoder, src.contexts()[0].encoder);
        assert_eq!(m1.outputs(), fresh.outputs());

        let other = Model::single_task(ModelDims { d_lstm: 3, ..dims() }, t, emb(), 2).unwrap();
        assert!(matches!(init_transfer(&src, other, InitMode::Init1), Err(Error::DimMismatch(g)) if g == "context_encoder"));
    }

    #[test]
    fn task_graph_roundtrip() {
        let emb = EmbeddingProvider::<f64>::HashingRandom { d_w: 3, seed: 1 };
        let m = build_multitask(dims(), &four(), SharingMode::MultGrp, emb, 0).unwrap();
        let g = TaskGraph::of(&m);
        assert_eq!(g.tasks[1].context, "context_encoder.full_paper");
        assert_eq!(TaskGraph::from_json(&g.to_json().unwrap()).unwrap(), g);
    }
}
