//! Tokenization and per-token word-embedding providers.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MAX_TOKENS: usize = 128;
pub const UNK: &str = "<unk>";

/// Whitespace tokens of one sentence, already truncated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Whitespace tokenization keeping the first `max_tokens` tokens.
pub fn tokenize(text: &str, max_tokens: usize) -> Result<TokenSeq> {
    let tokens: Vec<String> = text.split_whitespace().take(max_tokens).map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyAfterTokenization);
    }
    Ok(TokenSeq(tokens))
}

/// One row per token, each of width `d_w`.
pub type EmbeddingMatrix<T> = Vec<Vec<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    PrecomputedFile,
    TrainableLookup,
    HashingRandom,
}

/// Token vocabulary; id 0 is the shared unknown-token row.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabulary {
    index: IndexMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, max_tokens: usize) -> Self {
        let mut index = IndexMap::new();
        index.insert(UNK.to_string(), 0);
        for text in texts {
            for tok in text.split_whitespace().take(max_tokens) {
                let next = index.len();
                index.entry(tok.to_string()).or_insert(next);
            }
        }
        Self { index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut index = IndexMap::new();
        index.insert(UNK.to_string(), 0);
        for tok in tokens {
            let next = index.len();
            index.entry(tok).or_insert(next);
        }
        Self { index }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoreEntry {
    doc_id: String,
    sent_idx: usize,
    n_tokens: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    d_w: usize,
    entries: Vec<StoreEntry>,
}

/// Per-token vectors dumped by an external encoder, keyed by
/// `(doc_id, sentence index)`.
///
/// On disk: a one-line JSON manifest, a `\n`, then the little-endian `f32`
/// payload. Offsets count floats from the start of the payload.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedStore {
    d_w: usize,
    entries: HashMap<(String, usize), (usize, usize)>,
    payload: Vec<f32>,
}

impl PrecomputedStore {
    pub fn new(d_w: usize) -> Self {
        Self { d_w, ..Default::default() }
    }

    pub fn d_w(&self) -> usize {
        self.d_w
    }

    pub fn insert(&mut self, doc_id: &str, sent_idx: usize, rows: &[Vec<f32>]) -> Result<()> {
        if rows.iter().any(|r| r.len() != self.d_w) {
            return Err(Error::ShapeMismatch(format!("embedding rows must have width {}", self.d_w)));
        }
        let offset = self.payload.len();
        for r in rows {
            self.payload.extend_from_slice(r);
        }
        self.entries.insert((doc_id.to_string(), sent_idx), (rows.len(), offset));
        Ok(())
    }

    pub fn get(&self, doc_id: &str, sent_idx: usize) -> Option<&[f32]> {
        self.entries
            .get(&(doc_id.to_string(), sent_idx))
            .map(|&(n, off)| &self.payload[off..off + n * self.d_w])
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut entries: Vec<StoreEntry> = self
            .entries
            .iter()
            .map(|((doc_id, sent_idx), &(n_tokens, offset))| StoreEntry {
                doc_id: doc_id.clone(),
                sent_idx: *sent_idx,
                n_tokens,
                offset,
            })
            .collect();
        entries.sort_by_key(|e| e.offset);
        serde_json::to_writer(&mut out, &StoreManifest { d_w: self.d_w, entries })?;
        out.write_all(b"\n")?;
        for x in &self.payload {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let manifest: StoreManifest = serde_json::from_str(line.trim_end())?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format("payload is not a whole number of f32 values".into()));
        }
        let payload: Vec<f32> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut entries = HashMap::new();
        for e in manifest.entries {
            if e.offset + e.n_tokens * manifest.d_w > payload.len() {
                return Err(Error::Format(format!("entry {}:{} runs past the payload", e.doc_id, e.sent_idx)));
            }
            entries.insert((e.doc_id, e.sent_idx), (e.n_tokens, e.offset));
        }
        Ok(Self { d_w: manifest.d_w, entries, payload })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Location of a sentence, used by the precomputed provider.
#[derive(Clone, Copy, Debug)]
pub struct SentenceKey<'a> {
    pub dataset: &'a str,
    pub doc_id: &'a str,
    pub sent_idx: usize,
}

/// Pre-resolved model input for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub enum SentenceInput<T> {
    /// Vocabulary ids into a trainable table.
    Ids(Vec<usize>),
    /// Frozen vectors.
    Vectors(EmbeddingMatrix<T>),
}

impl<T> SentenceInput<T> {
    pub fn len(&self) -> usize {
        match self {
            SentenceInput::Ids(ids) => ids.len(),
            SentenceInput::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub enum EmbeddingProvider<T> {
    /// Stores keyed by dataset name, shared between model copies.
    PrecomputedFile { d_w: usize, stores: Arc<HashMap<String, PrecomputedStore>> },
    TrainableLookup { vocab: Vocabulary, table: Tensor<T> },
    HashingRandom { d_w: usize, seed: u64 },
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl<T: Scalar> EmbeddingProvider<T> {
    /// Trainable table with rows uniform in `[-0.1, 0.1]`.
    pub fn trainable(vocab: Vocabulary, d_w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Tensor::uniform(&[vocab.len(), d_w], 0.1, &mut rng);
        EmbeddingProvider::TrainableLookup { vocab, table }
    }

    pub fn d_w(&self) -> usize {
        match self {
            EmbeddingProvider::PrecomputedFile { d_w, .. } | EmbeddingProvider::HashingRandom { d_w, .. } => *d_w,
            EmbeddingProvider::TrainableLookup { table, .. } => table.cols(),
        }
    }

    pub fn mode(&self) -> EmbeddingMode {
        match self {
            EmbeddingProvider::PrecomputedFile { .. } => EmbeddingMode::PrecomputedFile,
            EmbeddingProvider::TrainableLookup { .. } => EmbeddingMode::TrainableLookup,
            EmbeddingProvider::HashingRandom { .. } => EmbeddingMode::HashingRandom,
        }
    }

    pub fn table(&self) -> Option<&Tensor<T>> {
        match self {
            EmbeddingProvider::TrainableLookup { table, .. } => Some(table),
            _ => None,
        }
    }

    pub fn table_mut(&mut self) -> Option<&mut Tensor<T>> {
        match self {
            EmbeddingProvider::TrainableLookup { table, .. } => Some(table),
            _ => None,
        }
    }

    fn hashed_row(&self, seed: u64, token: &str, d_w: usize) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(token));
        (0..d_w).map(|_| T::of(rng.gen_range(-1.0..=1.0))).collect()
    }

    /// Resolves a tokenized sentence into model input.
    pub fn prepare(&self, key: SentenceKey<'_>, tokens: &TokenSeq) -> Result<SentenceInput<T>> {
        match self {
            EmbeddingProvider::TrainableLookup { vocab, .. } => {
                Ok(SentenceInput::Ids(tokens.tokens().iter().map(|t| vocab.id(t)).collect()))
            }
            EmbeddingProvider::HashingRandom { d_w, seed } => Ok(SentenceInput::Vectors(
                tokens.tokens().iter().map(|t| self.hashed_row(*seed, t, *d_w)).collect(),
            )),
            EmbeddingProvider::PrecomputedFile { d_w, stores } => {
                let missing =
                    || Error::MissingPrecomputedEntry { doc: key.doc_id.to_string(), sentence: key.sent_idx };
                let flat = stores.get(key.dataset).and_then(|s| s.get(key.doc_id, key.sent_idx)).ok_or_else(missing)?;
                let rows: EmbeddingMatrix<T> = flat
                    .chunks_exact(*d_w)
                    .take(tokens.len())
                    .map(|r| r.iter().map(|&x| T::of(x as f64)).collect())
                    .collect();
                if rows.is_empty() {
                    return Err(missing());
                }
                Ok(SentenceInput::Vectors(rows))
            }
        }
    }

    /// Produces the `(m, d_w)` matrix for a prepared sentence.
    pub fn lookup(&self, input: &SentenceInput<T>) -> EmbeddingMatrix<T> {
        match (self, input) {
            (_, SentenceInput::Vectors(v)) => v.clone(),
            (EmbeddingProvider::TrainableLookup { table, .. }, SentenceInput::Ids(ids)) => {
                ids.iter().map(|&i| table.row(i).to_vec()).collect()
            }
            (_, SentenceInput::Ids(_)) => panic!("vocabulary ids need a trainable lookup provider"),
        }
    }

    /// Tokenize-free convenience: embeds a token sequence directly.
    pub fn embed(&self, key: SentenceKey<'_>, tokens: &TokenSeq) -> Result<EmbeddingMatrix<T>> {
        Ok(self.lookup(&self.prepare(key, tokens)?))
    }
}
