//! Datasets of labelled sentence sequences: ingestion, fold plans,
//! truncation and label collapsing.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 64;

/// The six generic classes of the compiled cross-domain dataset.
pub const GENERIC_CLASSES: [&str; 6] = ["Background", "Problem", "Methods", "Results", "Conclusions", "FutureWork"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextType {
    Abstract,
    FullPaper,
}

impl TextType {
    pub fn as_str(self) -> &'static str {
        match self {
            TextType::Abstract => "abstract",
            TextType::FullPaper => "full_paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: String,
    classes: Vec<String>,
}

fn normalize(label: &str) -> String {
    label.trim().to_lowercase()
}

impl LabelScheme {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 || classes.len() > MAX_CLASSES {
            return Err(Error::InvalidScheme(format!("{} classes (need 2..={MAX_CLASSES})", classes.len())));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.trim().is_empty() {
                return Err(Error::InvalidScheme("empty class name".into()));
            }
            if !seen.insert(normalize(c)) {
                return Err(Error::InvalidScheme(format!("duplicate class {c:?}")));
            }
        }
        Ok(Self { name: name.into(), classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, id: usize) -> &str {
        &self.classes[id]
    }

    /// Case-insensitive lookup with surrounding whitespace ignored.
    pub fn resolve(&self, label: &str) -> Option<usize> {
        let key = normalize(label);
        self.classes.iter().position(|c| normalize(c) == key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn labels(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub text_type: TextType,
    pub scheme: LabelScheme,
    pub documents: Vec<Document>,
}

impl Dataset {
    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Sentence count per class, indexed like the scheme.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.len()];
        for s in self.documents.iter().flat_map(|d| &d.sentences) {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same metadata, different documents.
    pub fn with_documents(&self, documents: Vec<Document>) -> Dataset {
        Dataset { name: self.name.clone(), text_type: self.text_type, scheme: self.scheme.clone(), documents }
    }

    /// Checks every structural invariant of the dataset.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for d in &self.documents {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::DuplicateDocId(d.id.clone()));
            }
            if d.sentences.is_empty() {
                return Err(Error::EmptyDocument(d.id.clone()));
            }
            for s in &d.sentences {
                if s.label >= self.scheme.len() {
                    return Err(Error::InvalidArgument(format!("label {} out of range in {}", s.label, d.id)));
                }
                if s.text.trim().is_empty() {
                    return Err(Error::InvalidArgument(format!("empty sentence in {}", d.id)));
                }
            }
        }
        Ok(())
    }
}

/// Parses the PubMed-RCT line format: `###<id>` headers, `LABEL<TAB>sentence`
/// bodies, blank line after each document.
pub fn parse_pubmed_rct(text: &str, scheme: &LabelScheme) -> Result<Dataset> {
    let mut documents: Vec<Document> = Vec::new();
    let mut ids = HashSet::new();
    let mut current: Option<Document> = None;

    let mut finish = |doc: Document, documents: &mut Vec<Document>| -> Result<()> {
        if doc.sentences.is_empty() {
            return Err(Error::EmptyDocument(doc.id));
        }
        if !ids.insert(doc.id.clone()) {
            return Err(Error::DuplicateDocId(doc.id));
        }
        documents.push(doc);
        Ok(())
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(doc) = current.take() {
                finish(doc, &mut documents)?;
            }
            continue;
        }
        if let Some(id) = line.strip_prefix("###") {
            if let Some(doc) = current.take() {
                finish(doc, &mut documents)?;
            }
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::MalformedLine { line: line_no });
            }
            current = Some(Document { id: id.to_string(), sentences: Vec::new() });
            continue;
        }
        let doc = current.as_mut().ok_or(Error::MalformedLine { line: line_no })?;
        let (label, sentence) = line.split_once('\t').ok_or(Error::MalformedLine { line: line_no })?;
        if sentence.trim().is_empty() {
            return Err(Error::MalformedLine { line: line_no });
        }
        let label_id = scheme
            .resolve(label)
            .ok_or_else(|| Error::UnknownLabel { line: line_no, label: label.to_string() })?;
        doc.sentences.push(Sentence { text: sentence.to_string(), label: label_id });
    }
    if let Some(doc) = current.take() {
        finish(doc, &mut documents)?;
    }

    Ok(Dataset { name: scheme.name.clone(), text_type: TextType::Abstract, scheme: scheme.clone(), documents })
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset: String,
    text_type: TextType,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonSentence {
    text: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct JsonDocument {
    doc_id: String,
    sentences: Vec<JsonSentence>,
}

/// Reads the canonical JSONL format: one header object, then one document per line.
pub fn parse_canonical_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut header: Option<(String, TextType, LabelScheme)> = None;
    let mut documents = Vec::new();
    let mut ids = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|_| Error::MalformedLine { line: line_no })?;
        let Some((_, _, scheme)) = &header else {
            if value.get("doc_id").is_some() {
                return Err(Error::MissingHeader);
            }
            let h: Header = serde_json::from_value(value).map_err(|_| Error::MissingHeader)?;
            let scheme = LabelScheme::new(h.dataset.clone(), h.classes)?;
            header = Some((h.dataset, h.text_type, scheme));
            continue;
        };
        let doc: JsonDocument = serde_json::from_value(value).map_err(|_| Error::MalformedLine { line: line_no })?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(Error::DuplicateDocId(doc.doc_id));
        }
        if doc.sentences.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id));
        }
        let mut sentences = Vec::with_capacity(doc.sentences.len());
        for s in doc.sentences {
            if s.text.trim().is_empty() {
                return Err(Error::MalformedLine { line: line_no });
            }
            let label = scheme
                .resolve(&s.label)
                .ok_or_else(|| Error::UnknownLabel { line: line_no, label: s.label.clone() })?;
            sentences.push(Sentence { text: s.text, label });
        }
        documents.push(Document { id: doc.doc_id, sentences });
    }

    let (name, text_type, scheme) = header.ok_or(Error::MissingHeader)?;
    Ok(Dataset { name, text_type, scheme, documents })
}

/// Writes the canonical JSONL format (UTF-8, LF line endings).
pub fn write_canonical_jsonl<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        dataset: ds.name.clone(),
        text_type: ds.text_type,
        classes: ds.scheme.classes().to_vec(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for d in &ds.documents {
        let doc = JsonDocument {
            doc_id: d.id.clone(),
            sentences: d
                .sentences
                .iter()
                .map(|s| JsonSentence { text: s.text.clone(), label: ds.scheme.class(s.label).to_string() })
                .collect(),
        };
        serde_json::to_writer(&mut out, &doc)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Assignment of every document to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: IndexMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded k-fold plan. Fold `f` is tested, fold `(f + 1) mod k` validates.
pub fn split_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 3")));
    }
    if ds.documents.len() < k {
        return Err(Error::TooFewDocuments { needed: k, found: ds.documents.len() });
    }
    let mut order: Vec<usize> = (0..ds.documents.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; ds.documents.len()];
    for (pos, &doc) in order.iter().enumerate() {
        fold_of[doc] = pos % k;
    }
    let assignment = ds.documents.iter().zip(fold_of).map(|(d, f)| (d.id.clone(), f)).collect();
    Ok(FoldPlan { k, assignment })
}

impl FoldPlan {
    pub fn validation_fold(&self, test_fold: usize) -> usize {
        (test_fold + 1) % self.k
    }

    /// Train/validation/test datasets for one fold, preserving document order.
    pub fn split(&self, ds: &Dataset, test_fold: usize) -> Result<Splits> {
        if test_fold >= self.k {
            return Err(Error::InvalidArgument(format!("fold {test_fold} >= k = {}", self.k)));
        }
        let val_fold = self.validation_fold(test_fold);
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for d in &ds.documents {
            let f = *self
                .assignment
                .get(&d.id)
                .ok_or_else(|| Error::InvalidArgument(format!("document {:?} not in fold plan", d.id)))?;
            if f == test_fold {
                test.push(d.clone());
            } else if f == val_fold {
                val.push(d.clone());
            } else {
                train.push(d.clone());
            }
        }
        Ok(Splits { train: ds.with_documents(train), val: ds.with_documents(val), test: ds.with_documents(test) })
    }
}

/// Keeps `ceil(fraction * |documents|)` documents sampled uniformly without
/// replacement; survivors keep their original order.
pub fn truncate_fraction(ds: &Dataset, fraction: Ratio<u64>, seed: u64) -> Result<Dataset> {
    if *fraction.numer() == 0 || fraction > Ratio::from_integer(1) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = ds.documents.len() as u64;
    let keep = (fraction * n).ceil().to_integer() as usize;
    if keep == ds.documents.len() {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, ds.documents.len(), keep).into_vec();
    chosen.sort_unstable();
    Ok(ds.with_documents(chosen.into_iter().map(|i| ds.documents[i].clone()).collect()))
}

/// Parses `"a/b"` or an integer into a rational fraction.
pub fn parse_fraction(s: &str) -> Result<Ratio<u64>> {
    let bad = || Error::InvalidArgument(format!("bad fraction {s:?}"));
    let r = match s.trim().split_once('/') {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0 {
                return Err(bad());
            }
            Ratio::new(a, b)
        }
        None => Ratio::from_integer(s.trim().parse().map_err(|_| bad())?),
    };
    Ok(r)
}

#[derive(Serialize, Deserialize)]
struct MappingFile {
    generic_classes: Vec<String>,
    map: IndexMap<String, IndexMap<String, String>>,
}

/// Per-dataset mapping of source classes onto a generic scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMapping {
    pub generic: LabelScheme,
    entries: IndexMap<String, IndexMap<String, usize>>,
}

impl LabelMapping {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text)?;
        let generic = LabelScheme::new("generic", file.generic_classes)?;
        let mut entries = IndexMap::new();
        for (dataset, map) in file.map {
            let mut resolved = IndexMap::new();
            for (source, target) in map {
                let id = generic.resolve(&target).ok_or_else(|| {
                    Error::InvalidArgument(format!("{dataset}:{source} maps to unknown generic class {target:?}"))
                })?;
                resolved.insert(normalize(&source), id);
            }
            entries.insert(dataset, resolved);
        }
        Ok(Self { generic, entries })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MappingFile {
            generic_classes: self.generic.classes().to_vec(),
            map: self
                .entries
                .iter()
                .map(|(d, m)| (d.clone(), m.iter().map(|(s, &g)| (s.clone(), self.generic.class(g).to_string())).collect()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Whether the generic scheme is exactly the six cross-domain clusters.
    pub fn is_six_cluster_scheme(&self) -> bool {
        self.generic.len() == GENERIC_CLASSES.len()
            && GENERIC_CLASSES.iter().all(|c| self.generic.resolve(c).is_some())
    }

    pub fn lookup(&self, dataset: &str, class: &str) -> Option<usize> {
        self.entries.get(dataset).and_then(|m| m.get(&normalize(class))).copied()
    }

    /// Identity mapping of one scheme onto itself.
    pub fn identity(dataset: &str, scheme: &LabelScheme) -> Self {
        let map = scheme.classes().iter().enumerate().map(|(i, c)| (normalize(c), i)).collect();
        let mut entries = IndexMap::new();
        entries.insert(dataset.to_string(), map);
        Self { generic: scheme.clone(), entries }
    }
}

/// Replaces every label by its generic class; documents and order are kept.
pub fn collapse_labels(ds: &Dataset, mapping: &LabelMapping) -> Result<Dataset> {
    let table = ds
        .scheme
        .classes()
        .iter()
        .map(|c| {
            mapping
                .lookup(&ds.name, c)
                .ok_or_else(|| Error::UnmappedClass { dataset: ds.name.clone(), class: c.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let documents = ds
        .documents
        .iter()
        .map(|d| Document {
            id: d.id.clone(),
            sentences: d.sentences.iter().map(|s| Sentence { text: s.text.clone(), label: table[s.label] }).collect(),
        })
        .collect();
    Ok(Dataset { name: ds.name.clone(), text_type: ds.text_type, scheme: mapping.generic.clone(), documents })
}
