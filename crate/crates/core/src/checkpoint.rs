//! Checkpoint container: a one-line JSON manifest, `\n`, then every named
//! array as little-endian `f32`. Offsets count floats into the payload.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelScheme;
use crate::embeddings::{EmbeddingMode, EmbeddingProvider, Vocabulary};
use crate::encoder::{ContextEncoder, ModelDims, OutputLayer, SentenceEncoder};
use crate::error::{Error, Result};
use crate::model::{ContextSet, Model, OutputSet, TaskSpec, TaskWiring};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transfer::TaskGraph;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub mode: EmbeddingMode,
    pub d_w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dims: ModelDims,
    pub named_arrays: Vec<ArrayEntry>,
    pub embeddings: EmbeddingMeta,
    pub task_graph: TaskGraph,
}

fn embedding_meta<T: Scalar>(p: &EmbeddingProvider<T>) -> EmbeddingMeta {
    match p {
        EmbeddingProvider::PrecomputedFile { d_w, .. } => {
            EmbeddingMeta { mode: EmbeddingMode::PrecomputedFile, d_w: *d_w, seed: None, vocab: None }
        }
        EmbeddingProvider::HashingRandom { d_w, seed } => {
            EmbeddingMeta { mode: EmbeddingMode::HashingRandom, d_w: *d_w, seed: Some(*seed), vocab: None }
        }
        EmbeddingProvider::TrainableLookup { vocab, table } => EmbeddingMeta {
            mode: EmbeddingMode::TrainableLookup,
            d_w: table.cols(),
            seed: None,
            vocab: Some(vocab.tokens().map(str::to_string).collect()),
        },
    }
}

pub fn save<T: Scalar, W: Write>(model: &Model<T>, mut out: W) -> Result<()> {
    let arrays = model.named_arrays();
    let mut offset = 0;
    let named_arrays = arrays
        .iter()
        .map(|(name, t)| {
            let e = ArrayEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims: *model.dims(),
        named_arrays,
        embeddings: embedding_meta(model.embeddings()),
        task_graph: TaskGraph::of(model),
    };
    serde_json::to_writer(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    for (_, t) in &arrays {
        for x in t.data() {
            out.write_all(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: &mut R) -> Result<Manifest> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let m: Manifest = serde_json::from_str(line.trim_end())?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", m.format_version)));
    }
    Ok(m)
}

/// Rebuilds a model. Precomputed-embedding models come back with no stores
/// attached.
pub fn load<T: Scalar, R: BufRead>(mut input: R) -> Result<Model<T>> {
    let m = read_manifest(&mut input)?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("payload is not a whole number of f32 values".into()));
    }
    let payload: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

    let dims = m.dims;
    dims.validate()?;
    let e = &m.embeddings;
    let embeddings = match e.mode {
        EmbeddingMode::PrecomputedFile => EmbeddingProvider::PrecomputedFile { d_w: e.d_w, stores: Default::default() },
        EmbeddingMode::HashingRandom => EmbeddingProvider::HashingRandom {
            d_w: e.d_w,
            seed: e.seed.ok_or_else(|| Error::Format("hashing embeddings need a seed".into()))?,
        },
        EmbeddingMode::TrainableLookup => {
            let vocab = Vocabulary::from_tokens(e.vocab.clone().ok_or_else(|| Error::Format("missing vocabulary".into()))?);
            let rows = vocab.len();
            EmbeddingProvider::TrainableLookup { vocab, table: Tensor::zeros(&[rows, e.d_w]) }
        }
    };

    let g = &m.task_graph;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let contexts: Vec<ContextSet<T>> =
        g.contexts.iter().map(|n| ContextSet { name: n.clone(), encoder: ContextEncoder::new(&dims, &mut rng) }).collect();
    let mut widths: Vec<Option<usize>> = vec![None; g.outputs.len()];
    let mut tasks = Vec::with_capacity(g.tasks.len());
    for t in &g.tasks {
        let find = |names: &[String], n: &str| {
            names.iter().position(|x| x == n).ok_or_else(|| Error::Format(format!("task graph refers to missing set {n}")))
        };
        let context = find(&g.contexts, &t.context)?;
        let output = find(&g.outputs, &t.output)?;
        widths[output] = Some(t.classes.len());
        let scheme = LabelScheme::new(t.scheme.clone(), t.classes.clone())?;
        tasks.push(TaskWiring { spec: TaskSpec { task_id: t.task_id.clone(), text_type: t.text_type, scheme }, context, output });
    }
    let outputs = g
        .outputs
        .iter()
        .zip(&widths)
        .map(|(n, w)| {
            let w = w.ok_or_else(|| Error::Format(format!("output set {n} has no task")))?;
            Ok(OutputSet { name: n.clone(), layer: OutputLayer::new(&dims, w, &mut rng) })
        })
        .collect::<Result<Vec<_>>>()?;
    let sentence = SentenceEncoder::new(&dims, &mut rng);
    let mut model = Model::assemble(dims, embeddings, sentence, contexts, outputs, tasks, g.sharing)?;

    let index: HashMap<&str, &ArrayEntry> = m.named_arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    for (name, dst) in model.named_arrays_mut() {
        let a = index.get(name.as_str()).ok_or_else(|| Error::Format(format!("checkpoint lacks array {name}")))?;
        if a.shape != dst.shape() {
            return Err(Error::ShapeMismatch(format!("array {name}")));
        }
        let end = a.offset + dst.len();
        if end > payload.len() {
            return Err(Error::Format(format!("array {name} runs past the payload")));
        }
        for (d, s) in dst.data_mut().iter_mut().zip(&payload[a.offset..end]) {
            *d = T::of(*s as f64);
        }
    }
    Ok(model)
}

pub fn save_file<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    save(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_file<T: Scalar>(path: &Path) -> Result<Model<T>> {
    load(std::io::BufReader::new(std::fs::File::open(path)?))
}
