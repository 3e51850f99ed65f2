//! The full hierarchical tagger: named parameter groups wired to tasks.
//!
//! A single-task model is the one-task special case of the multi-task
//! wiring, so training, checkpointing and transfer share one code path.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelScheme, TextType};
use crate::crf;
use crate::embeddings::{tokenize, EmbeddingProvider, SentenceInput, SentenceKey};
use crate::encoder::{apply_mask, BiLstmTrace, ContextEncoder, Dropout, ModelDims, OutputLayer, SentenceEncoder, SentenceTrace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const EMBEDDING_TABLE: &str = "embeddings.lookup";
pub const SENTENCE_ENCODER: &str = "sentence_encoder";
pub const CONTEXT_ENCODER: &str = "context_encoder";

/// A task's identity and label space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub text_type: TextType,
    pub scheme: LabelScheme,
}

impl TaskSpec {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self { task_id: ds.name.clone(), text_type: ds.text_type, scheme: ds.scheme.clone() }
    }
}

/// Which context and output set a task runs through.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskWiring {
    pub spec: TaskSpec,
    pub context: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet<T> {
    pub name: String,
    pub encoder: ContextEncoder<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSet<T> {
    pub name: String,
    pub layer: OutputLayer<T>,
}

/// How parameter groups are shared between tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    /// Everything but the output layers is shared.
    MultAll,
    /// Context layers are shared only within a text type.
    MultGrp,
    /// Every layer is shared; requires a common label scheme.
    MultAllSho,
    /// Context and output layers are shared within a text type.
    MultGrpSho,
}

impl SharingMode {
    pub fn shares_output(self) -> bool {
        matches!(self, SharingMode::MultAllSho | SharingMode::MultGrpSho)
    }

    pub fn groups_by_text_type(self) -> bool {
        matches!(self, SharingMode::MultGrp | SharingMode::MultGrpSho)
    }
}

/// Sentence inputs and gold labels of one document, resolved once.
#[derive(Clone, Debug)]
pub struct PreparedDoc<T> {
    pub doc_id: String,
    pub inputs: Vec<SentenceInput<T>>,
    pub labels: Vec<usize>,
}

impl<T> PreparedDoc<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients for the groups one task is wired to.
#[derive(Clone, Debug)]
pub struct TaskGrads<T> {
    pub task: usize,
    pub embeddings: Option<Tensor<T>>,
    pub sentence: SentenceEncoder<T>,
    pub context: ContextEncoder<T>,
    pub output: OutputLayer<T>,
}

impl<T: Scalar> TaskGrads<T> {
    fn arrays_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = Vec::new();
        if let Some(t) = self.embeddings.as_mut() {
            v.push(t);
        }
        v.extend(self.sentence.arrays_mut().into_iter().map(|(_, t)| t));
        v.extend(self.context.arrays_mut().into_iter().map(|(_, t)| t));
        v.extend(self.output.arrays_mut().into_iter().map(|(_, t)| t));
        v
    }

    /// Gradient arrays in the same order as [`Model::task_arrays_mut`].
    pub fn arrays(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = Vec::new();
        if let Some(t) = self.embeddings.as_ref() {
            v.push(t);
        }
        v.extend(self.sentence.arrays().into_iter().map(|(_, t)| t));
        v.extend(self.context.arrays().into_iter().map(|(_, t)| t));
        v.extend(self.output.arrays().into_iter().map(|(_, t)| t));
        v
    }

    pub fn zero(&mut self) {
        for t in self.arrays_mut() {
            t.fill(T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.arrays_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays().iter().map(|t| t.sq_norm()).sum::<f64>().sqrt()
    }
}

struct SentenceStep<T> {
    emb_mask: Option<Vec<T>>,
    trace: SentenceTrace<T>,
    e_mask: Option<Vec<T>>,
}

struct DocTrace<T> {
    sentences: Vec<SentenceStep<T>>,
    context: BiLstmTrace<T>,
    c_masks: Vec<Option<Vec<T>>>,
    ctx: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    dims: ModelDims,
    embeddings: EmbeddingProvider<T>,
    sentence: SentenceEncoder<T>,
    contexts: Vec<ContextSet<T>>,
    outputs: Vec<OutputSet<T>>,
    tasks: Vec<TaskWiring>,
    sharing: Option<SharingMode>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized single-task model.
    pub fn single_task(dims: ModelDims, task: TaskSpec, embeddings: EmbeddingProvider<T>, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentence = SentenceEncoder::new(&dims, &mut rng);
        let context = ContextSet { name: CONTEXT_ENCODER.into(), encoder: ContextEncoder::new(&dims, &mut rng) };
        let output = OutputSet {
            name: format!("output.{}", task.task_id),
            layer: OutputLayer::new(&dims, task.scheme.len(), &mut rng),
        };
        Self::assemble(dims, embeddings, sentence, vec![context], vec![output], vec![TaskWiring { spec: task, context: 0, output: 0 }], None)
    }

    pub(crate) fn assemble(
        dims: ModelDims,
        embeddings: EmbeddingProvider<T>,
        sentence: SentenceEncoder<T>,
        contexts: Vec<ContextSet<T>>,
        outputs: Vec<OutputSet<T>>,
        tasks: Vec<TaskWiring>,
        sharing: Option<SharingMode>,
    ) -> Result<Self> {
        if embeddings.d_w() != dims.d_w {
            return Err(Error::ShapeMismatch(format!(
                "embedding provider width {} but dims.d_w = {}",
                embeddings.d_w(),
                dims.d_w
            )));
        }
        for w in &tasks {
            if w.context >= contexts.len() || w.output >= outputs.len() {
                return Err(Error::InvalidArgument(format!("task {} wired to a missing set", w.spec.task_id)));
            }
            if outputs[w.output].layer.num_labels() != w.spec.scheme.len() {
                return Err(Error::ShapeMismatch(format!("output set for task {} has wrong width", w.spec.task_id)));
            }
        }
        Ok(Self { dims, embeddings, sentence, contexts, outputs, tasks, sharing })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn sharing(&self) -> Option<SharingMode> {
        self.sharing
    }

    pub fn embeddings(&self) -> &EmbeddingProvider<T> {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut EmbeddingProvider<T> {
        &mut self.embeddings
    }

    pub fn sentence_encoder(&self) -> &SentenceEncoder<T> {
        &self.sentence
    }

    pub fn sentence_encoder_mut(&mut self) -> &mut SentenceEncoder<T> {
        &mut self.sentence
    }

    pub fn contexts(&self) -> &[ContextSet<T>] {
        &self.contexts
    }

    pub fn contexts_mut(&mut self) -> &mut [ContextSet<T>] {
        &mut self.contexts
    }

    pub fn outputs(&self) -> &[OutputSet<T>] {
        &self.outputs
    }

    pub fn outputs_mut(&mut self) -> &mut [OutputSet<T>] {
        &mut self.outputs
    }

    pub fn tasks(&self) -> &[TaskWiring] {
        &self.tasks
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|w| w.spec.task_id == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    /// `(sentence encoders, context sets, output sets)`.
    pub fn parameter_set_counts(&self) -> (usize, usize, usize) {
        (1, self.contexts.len(), self.outputs.len())
    }

    /// Tokenizes and resolves embeddings for every sentence of a dataset.
    pub fn prepare(&self, ds: &Dataset, max_tokens: usize) -> Result<Vec<PreparedDoc<T>>> {
        ds.documents
            .iter()
            .map(|d| {
                let inputs = d
                    .sentences
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let key = SentenceKey { dataset: &ds.name, doc_id: &d.id, sent_idx: i };
                        self.embeddings.prepare(key, &tokenize(&s.text, max_tokens)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedDoc { doc_id: d.id.clone(), inputs, labels: d.labels() })
            })
            .collect()
    }

    fn forward_traced(
        &self,
        task: usize,
        doc: &PreparedDoc<T>,
        dropout: Dropout,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<Vec<T>>, DocTrace<T>)> {
        let wiring = self.tasks.get(task).ok_or_else(|| Error::UnknownTask(format!("#{task}")))?;
        let use_dropout = rng.is_some() && dropout.active();
        let mut sentences = Vec::with_capacity(doc.inputs.len());
        let mut pooled = Vec::with_capacity(doc.inputs.len());
        for input in &doc.inputs {
            let mut emb = self.embeddings.lookup(input);
            let emb_mask = match (&mut rng, use_dropout) {
                (Some(r), true) => {
                    let mask: Vec<T> = dropout.mask(emb.len() * self.dims.d_w, &mut **r);
                    for (row, m) in emb.iter_mut().zip(mask.chunks(self.dims.d_w)) {
                        apply_mask(row, m);
                    }
                    Some(mask)
                }
                _ => None,
            };
            let (mut e, trace) = self.sentence.encode(&emb)?;
            let e_mask = match (&mut rng, use_dropout) {
                (Some(r), true) => {
                    let mask = dropout.mask(e.len(), &mut **r);
                    apply_mask(&mut e, &mask);
                    Some(mask)
                }
                _ => None,
            };
            pooled.push(e);
            sentences.push(SentenceStep { emb_mask, trace, e_mask });
        }
        let (mut ctx, context) = self.contexts[wiring.context].encoder.enrich(&pooled)?;
        let mut c_masks = Vec::with_capacity(ctx.len());
        for c in &mut ctx {
            c_masks.push(match (&mut rng, use_dropout) {
                (Some(r), true) => {
                    let mask = dropout.mask(c.len(), &mut **r);
                    apply_mask(c, &mask);
                    Some(mask)
                }
                _ => None,
            });
        }
        let logits = self.outputs[wiring.output].layer.project(&ctx)?;
        Ok((logits, DocTrace { sentences, context, c_masks, ctx }))
    }

    /// Evaluation-mode logits (no dropout).
    pub fn logits(&self, task: usize, doc: &PreparedDoc<T>) -> Result<Vec<Vec<T>>> {
        Ok(self.forward_traced(task, doc, Dropout { rate: 0.0 }, None)?.0)
    }

    /// Training-mode logits with dropout drawn from `rng`.
    pub fn logits_train(&self, task: usize, doc: &PreparedDoc<T>, dropout: Dropout, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        Ok(self.forward_traced(task, doc, dropout, Some(rng))?.0)
    }

    /// Viterbi labels under the task's output set.
    pub fn predict(&self, task: usize, doc: &PreparedDoc<T>) -> Result<Vec<usize>> {
        let logits = self.logits(task, doc)?;
        Ok(crf::viterbi_decode(&self.outputs[self.tasks[task].output].layer.crf, &logits)?.0)
    }

    /// Evaluation-mode CRF negative log-likelihood of the gold labels.
    pub fn loss(&self, task: usize, doc: &PreparedDoc<T>) -> Result<f64> {
        let logits = self.logits(task, doc)?;
        crf::nll_loss(&self.outputs[self.tasks[task].output].layer.crf, &logits, &doc.labels)
    }

    pub fn new_grads(&self, task: usize) -> TaskGrads<T> {
        let w = &self.tasks[task];
        TaskGrads {
            task,
            embeddings: self.embeddings.table().map(|t| Tensor::zeros(t.shape())),
            sentence: self.sentence.zeros_like(),
            context: self.contexts[w.context].encoder.zeros_like(),
            output: self.outputs[w.output].layer.zeros_like(),
        }
    }

    /// Adds `scale * d(NLL)/d(params)` for one document into `grads`; returns the NLL.
    pub fn loss_and_grad(
        &self,
        task: usize,
        doc: &PreparedDoc<T>,
        dropout: Dropout,
        rng: Option<&mut dyn RngCore>,
        scale: T,
        grads: &mut TaskGrads<T>,
    ) -> Result<f64> {
        debug_assert_eq!(grads.task, task);
        let (logits, trace) = self.forward_traced(task, doc, dropout, rng)?;
        let wiring = &self.tasks[task];
        let out = &self.outputs[wiring.output].layer;
        let (loss, g) = crf::nll_with_grad(&out.crf, &logits, &doc.labels)?;

        let l = out.num_labels();
        for (dst, src) in [
            (grads.output.crf.transitions.data_mut(), &g.transitions),
            (grads.output.crf.begin.data_mut(), &g.begin),
            (grads.output.crf.end.data_mut(), &g.end),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * T::of(*b);
            }
        }
        let dlogits: Vec<Vec<T>> =
            g.logits.iter().map(|r| r.iter().map(|x| scale * T::of(*x)).collect()).collect();
        debug_assert!(dlogits.iter().all(|r| r.len() == l));

        let mut dctx = out.backward_projection(&trace.ctx, &dlogits, &mut grads.output);
        for (dc, mask) in dctx.iter_mut().zip(&trace.c_masks) {
            if let Some(m) = mask {
                apply_mask(dc, m);
            }
        }
        let de = self.contexts[wiring.context].encoder.backward(&trace.context, &dctx, &mut grads.context);
        for ((step, mut dei), input) in trace.sentences.iter().zip(de).zip(&doc.inputs) {
            if let Some(m) = &step.e_mask {
                apply_mask(&mut dei, m);
            }
            let mut demb = self.sentence.backward(&step.trace, &dei, &mut grads.sentence);
            if let (Some(table), SentenceInput::Ids(ids)) = (grads.embeddings.as_mut(), input) {
                for (t, (row, &id)) in demb.iter_mut().zip(ids).enumerate() {
                    if let Some(m) = &step.emb_mask {
                        apply_mask(row, &m[t * self.dims.d_w..(t + 1) * self.dims.d_w]);
                    }
                    for (a, b) in table.row_mut(id).iter_mut().zip(row.iter()) {
                        *a += *b;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Every named array, in checkpoint order.
    pub fn named_arrays(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        if let Some(t) = self.embeddings.table() {
            v.push((EMBEDDING_TABLE.to_string(), t));
        }
        for (n, t) in self.sentence.arrays() {
            v.push((format!("{SENTENCE_ENCODER}.{n}"), t));
        }
        for c in &self.contexts {
            for (n, t) in c.encoder.arrays() {
                v.push((format!("{}.{n}", c.name), t));
            }
        }
        for o in &self.outputs {
            for (n, t) in o.layer.arrays() {
                v.push((format!("{}.{n}", o.name), t));
            }
        }
        v
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        if let Some(t) = self.embeddings.table_mut() {
            v.push((EMBEDDING_TABLE.to_string(), t));
        }
        for (n, t) in self.sentence.arrays_mut() {
            v.push((format!("{SENTENCE_ENCODER}.{n}"), t));
        }
        for c in &mut self.contexts {
            for (n, t) in c.encoder.arrays_mut() {
                v.push((format!("{}.{n}", c.name), t));
            }
        }
        for o in &mut self.outputs {
            for (n, t) in o.layer.arrays_mut() {
                v.push((format!("{}.{n}", o.name), t));
            }
        }
        v
    }

    /// Arrays a task's loss depends on, aligned with [`TaskGrads::arrays`].
    pub fn task_arrays_mut(&mut self, task: usize) -> Vec<(String, &mut Tensor<T>)> {
        let (ci, oi) = (self.tasks[task].context, self.tasks[task].output);
        let mut v = Vec::new();
        if let Some(t) = self.embeddings.table_mut() {
            v.push((EMBEDDING_TABLE.to_string(), t));
        }
        for (n, t) in self.sentence.arrays_mut() {
            v.push((format!("{SENTENCE_ENCODER}.{n}"), t));
        }
        let c = &mut self.contexts[ci];
        for (n, t) in c.encoder.arrays_mut() {
            v.push((format!("{}.{n}", c.name), t));
        }
        let o = &mut self.outputs[oi];
        for (n, t) in o.layer.arrays_mut() {
            v.push((format!("{}.{n}", o.name), t));
        }
        v
    }

    /// A standalone single-task model with this task's parameters.
    pub fn task_view(&self, task: usize) -> Model<T> {
        let w = &self.tasks[task];
        Model {
            dims: self.dims,
            embeddings: self.embeddings.clone(),
            sentence: self.sentence.clone(),
            contexts: vec![self.contexts[w.context].clone()],
            outputs: vec![self.outputs[w.output].clone()],
            tasks: vec![TaskWiring { spec: w.spec.clone(), context: 0, output: 0 }],
            sharing: self.sharing,
        }
    }

    /// Copies every named array of `other` with a matching name and shape.
    pub fn load_arrays_from<U: Scalar>(&mut self, other: &Model<U>) -> usize {
        let src: std::collections::HashMap<String, &Tensor<U>> = other.named_arrays().into_iter().collect();
        let mut copied = 0;
        for (name, dst) in self.named_arrays_mut() {
            if let Some(s) = src.get(&name) {
                if s.shape() == dst.shape() {
                    *dst = s.cast();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let embeddings = match &self.embeddings {
            EmbeddingProvider::TrainableLookup { vocab, table } => {
                EmbeddingProvider::TrainableLookup { vocab: vocab.clone(), table: table.cast() }
            }
            EmbeddingProvider::HashingRandom { d_w, seed } => EmbeddingProvider::HashingRandom { d_w: *d_w, seed: *seed },
            EmbeddingProvider::PrecomputedFile { d_w, stores } => {
                EmbeddingProvider::PrecomputedFile { d_w: *d_w, stores: stores.clone() }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Model {
            dims: self.dims,
            embeddings,
            sentence: SentenceEncoder::new(&self.dims, &mut rng),
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextSet { name: c.name.clone(), encoder: ContextEncoder::new(&self.dims, &mut rng) })
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|o| OutputSet {
                    name: o.name.clone(),
                    layer: OutputLayer::new(&self.dims, o.layer.num_labels(), &mut rng),
                })
                .collect(),
            tasks: self.tasks.clone(),
            sharing: self.sharing,
        };
        out.load_arrays_from(self);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Sentence};
    use crate::embeddings::Vocabulary;

    fn dataset() -> Dataset {
        let scheme = LabelScheme::new("toy", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let documents = (0..3)
            .map(|i| Document {
                id: format!("d{i}"),
                sentences: (0..=i)
                    .map(|j| Sentence { text: format!("w{} w{} x", i, j), label: (i + j) % 3 })
                    .collect(),
            })
            .collect();
        Dataset { name: "toy".into(), text_type: TextType::Abstract, scheme, documents }
    }

    fn model() -> (Model<f64>, Vec<PreparedDoc<f64>>) {
        let ds = dataset();
        let dims = ModelDims { d_w: 4, d_lstm: 3, d_u: 2, r: 2 };
        let vocab = Vocabulary::build(ds.documents.iter().flat_map(|d| d.sentences.iter().map(|s| s.text.as_str())), 128);
        let emb = EmbeddingProvider::trainable(vocab, 4, 1);
        let m = Model::single_task(dims, TaskSpec::from_dataset(&ds), emb, 2).unwrap();
        let docs = m.prepare(&ds, 128).unwrap();
        (m, docs)
    }

    #[test]
    fn eval_forward_is_deterministic_and_shaped() {
        let (m, docs) = model();
        for d in &docs {
            let a = m.logits(0, d).unwrap();
            assert_eq!(a, m.logits(0, d).unwrap());
            assert_eq!(a.len(), d.len());
            assert!(a.iter().all(|l| l.len() == 3));
        }
    }

    #[test]
    fn seeded_dropout_forward_is_reproducible() {
        let (m, docs) = model();
        let d = Dropout { rate: 0.5 };
        let a = m.logits_train(0, &docs[2], d, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = m.logits_train(0, &docs[2], d, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.logits(0, &docs[2]).unwrap());
    }

    #[test]
    fn named_arrays_are_unique_and_aligned_with_grads() {
        let (mut m, _) = model();
        let names: Vec<String> = m.named_arrays().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"sentence_encoder.lstm.fwd.W".to_string()));
        assert!(names.contains(&"output.toy.W_O".to_string()));
        assert!(names.contains(&"output.toy.crf.T".to_string()));
        let g = m.new_grads(0);
        let shapes: Vec<Vec<usize>> = g.arrays().iter().map(|t| t.shape().to_vec()).collect();
        let task_shapes: Vec<Vec<usize>> = m.task_arrays_mut(0).iter().map(|(_, t)| t.shape().to_vec()).collect();
        assert_eq!(shapes, task_shapes);
    }

    #[test]
    fn cast_roundtrip_preserves_values_within_f32() {
        let (m, docs) = model();
        let m32: Model<f32> = m.cast();
        let back: Model<f64> = m32.cast();
        let a = m.logits(0, &docs[1]).unwrap();
        let b = back.logits(0, &docs[1]).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
