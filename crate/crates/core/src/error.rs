use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("{words} words but {labels} labels")]
    LengthMismatch { words: usize, labels: usize },
    #[error("word {0:?} is empty or contains whitespace")]
    BadWord(String),
    #[error("invalid BIO sequence: {0}")]
    InvalidBio(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: malformed record: {reason}")]
    Malformed {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{source_name}:{line}: unknown tag {tag:?}")]
    UnknownTag {
        source_name: String,
        line: usize,
        tag: String,
    },
    #[error("sample {id} has no country code")]
    MissingCountry { id: String },
    #[error("test size {requested} exceeds corpus size {available}")]
    TestSizeTooLarge { requested: usize, available: usize },
    #[error("cannot build {k} folds from {n} samples")]
    KTooLarge { k: usize, n: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("sample {id}: mask needs {tag} which is neither in the source nor synthesizable")]
    UnsatisfiableMask { id: String, tag: crate::schema::BaseTag },
    #[error("sample {id}: first field is not Name")]
    NoName { id: String },
    #[error("unknown country {0:?}")]
    UnknownCountry(String),
    #[error("sample {id} has no country code")]
    MissingCountry { id: String },
    #[error("no masks given")]
    EmptyMasks,
    #[error("empty mask")]
    EmptyMask,
    #[error("nothing to duplicate: address has no words")]
    NothingToDuplicate,
    #[error("invalid noise config: {0}")]
    InvalidConfig(String),
    #[error("{source_name}:{line}: {reason}")]
    Malformed {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("sample {id}: label {label} is outside the model label set")]
    LabelOutsideModel { id: String, label: String },
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("{words} words but {labels} labels")]
    LengthMismatch { words: usize, labels: usize },
    #[error("splitter pieces {pieces:?} do not reassemble {word:?}")]
    SplitterRoundtrip { word: String, pieces: Vec<String> },
    #[error("{source_name}:{line}: {reason}")]
    Malformed {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum InteropError {
    #[error("unknown external tag {0:?}")]
    UnknownExternalTag(String),
    #[error("sample {id}: {pred} predicted tags for {gold} gold words")]
    LengthMismatch { id: String, gold: usize, pred: usize },
    #[error("{source_name}:{line}: {reason}")]
    Malformed {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("request {request_id} to {endpoint} failed: {message}")]
    Transport {
        endpoint: String,
        request_id: String,
        message: String,
    },
    #[error("request {request_id} to {endpoint} timed out")]
    Timeout { endpoint: String, request_id: String },
    #[error("request {request_id} to {endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        request_id: String,
        status: u16,
        body: String,
    },
    #[error("request {request_id} to {endpoint}: unreadable response: {message}")]
    BadResponse {
        endpoint: String,
        request_id: String,
        message: String,
    },
    #[error("no recorded completion {key} in {dir}")]
    FixtureMissing { key: String, dir: String },
    #[error("endpoint not configured: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample {id}: {gold} gold labels but {pred} predicted")]
    LengthMismatch { id: String, gold: usize, pred: usize },
    #[error("no fold reports to aggregate")]
    EmptyFolds,
    #[error("{source_name}:{line}: {reason}")]
    Malformed {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("sample {0:?} has no prediction")]
    MissingPrediction(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Umbrella error for callers driving the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Interop(#[from] InteropError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
