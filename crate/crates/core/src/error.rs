use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // corpus
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: malformed line")]
    MalformedLine { line: usize },
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("canonical stream has no header object")]
    MissingHeader,
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("need at least {needed} documents, found {found}")]
    TooFewDocuments { needed: usize, found: usize },
    #[error("class {class:?} of dataset {dataset:?} is not mapped")]
    UnmappedClass { dataset: String, class: String },
    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // embeddings
    #[error("sentence is empty after tokenization")]
    EmptyAfterTokenization,
    #[error("no precomputed embedding for document {doc:?}, sentence {sentence}")]
    MissingPrecomputedEntry { doc: String, sentence: usize },

    // numerics
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty label sequence")]
    EmptySequence,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,

    // transfer
    #[error("parameter group {0:?} has incompatible dimensions")]
    DimMismatch(String),
    #[error("shared-output sharing requires every task to use the same label scheme")]
    SchemeMismatchForSho,
    #[error("unknown task {0:?}")]
    UnknownTask(String),

    // relatedness
    #[error("class {0:?} has no gold sentences")]
    EmptyClass(String),
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("PCA input has rank {0} (< 2)")]
    DegenerateRank(usize),
    #[error("predictions incomplete: {0}")]
    IncompletePredictions(String),

    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
