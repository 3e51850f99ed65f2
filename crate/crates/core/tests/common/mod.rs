#![allow(dead_code)]

use hsln::corpus::{Dataset, Document, LabelScheme, Sentence, TextType};
use hsln::embeddings::{EmbeddingProvider, Vocabulary};
use hsln::encoder::ModelDims;
use hsln::model::{Model, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three classes with disjoint vocabularies; labels never decrease within a
/// document, so position also carries signal.
pub fn synthetic(name: &str, n_docs: usize, seed: u64) -> Dataset {
    let scheme = LabelScheme::new(name, vec!["Intro".into(), "Body".into(), "End".into()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = (0..n_docs)
        .map(|d| {
            let n = rng.gen_range(3..=7);
            let mut labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else if i == n - 1 { 2 } else { rng.gen_range(0..3) }).collect();
            labels.sort_unstable();
            let sentences = labels
                .into_iter()
                .map(|label| {
                    let len = rng.gen_range(3..=6);
                    let mut words: Vec<String> = (0..len).map(|_| format!("c{label}w{}", rng.gen_range(0..8))).collect();
                    words.insert(rng.gen_range(0..=len), "the".into());
                    Sentence { text: words.join(" "), label }
                })
                .collect();
            Document { id: format!("{name}-{d}"), sentences }
        })
        .collect();
    Dataset { name: name.into(), text_type: TextType::Abstract, scheme, documents }
}

pub fn vocab_of(datasets: &[&Dataset]) -> Vocabulary {
    Vocabulary::build(
        datasets.iter().flat_map(|ds| ds.documents.iter().flat_map(|d| d.sentences.iter().map(|s| s.text.as_str()))),
        128,
    )
}

pub fn tiny_dims() -> ModelDims {
    ModelDims { d_w: 8, d_lstm: 8, d_u: 4, r: 2 }
}

pub fn trainable_model(ds: &Dataset, dims: ModelDims, seed: u64) -> Model<f64> {
    let emb = EmbeddingProvider::trainable(vocab_of(&[ds]), dims.d_w, seed);
    Model::single_task(dims, TaskSpec::from_dataset(ds), emb, seed).unwrap()
}

pub fn spec(id: &str, text_type: TextType, classes: &[&str]) -> TaskSpec {
    TaskSpec {
        task_id: id.into(),
        text_type,
        scheme: LabelScheme::new(id, classes.iter().map(|s| s.to_string()).collect()).unwrap(),
    }
}

/// Every labeling of length `n` over `l` labels.
pub fn all_sequences(l: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}
