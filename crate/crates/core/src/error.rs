use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate label name `{0}`")]
    DuplicateLabel(String),
    #[error("label name must be non-empty")]
    EmptyLabelName,
    #[error("label `{0}` has an all-zero vector")]
    ZeroVector(String),
    #[error("label `{name}` has dimension {found}, expected {expected}")]
    RaggedDimensions {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("empty label space")]
    EmptyLabelSpace,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("no distance entry for label `{0}`")]
    MissingDistance(String),
    #[error("invalid region geometry {0:?}")]
    InvalidGeometry([f64; 4]),
    #[error("bag `{bag}`: region {index} has feature length {found}, expected {expected}")]
    RegionDimension {
        bag: String,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("bag `{0}`: instance 0 must cover the full frame [0,0,1,1]")]
    WholeImageGeometry(String),
    #[error("bag `{0}` has an empty whole-image feature")]
    EmptyFeature(String),
    #[error("bag `{bag}`: instance {instance} embeds to the zero vector before normalization")]
    DegenerateEmbedding { bag: String, instance: usize },
    #[error("feature projects to the zero vector before normalization")]
    ZeroProjection,
    #[error("weight matrix contains a non-finite entry")]
    NonFiniteWeight,
    #[error("weight has {found} entries, expected {expected}")]
    WeightShape { expected: usize, found: usize },
    #[error("invalid loss configuration: {0}")]
    InvalidLossConfig(String),
    #[error("no positive labels")]
    NoPositives,
    #[error("negative label set is empty")]
    NoNegatives,
    #[error("bag `{0}` has no ground-truth label in the label space")]
    NoKnownLabel(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("non-generic evaluation point ({0}); perturb the model and retry")]
    NonGenericPoint(String),
    #[error("k = {k} exceeds vocabulary size {vocab}")]
    KTooLarge { k: usize, vocab: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("bag `{bag}`: {found} predictions, expected exactly {k}")]
    PredictionCount { bag: String, k: usize, found: usize },
    #[error("bag `{bag}`: duplicate predicted label `{label}`")]
    DuplicatePrediction { bag: String, label: String },
    #[error("bag `{0}` present in only one of predictions and truths")]
    UnalignedBag(String),
    #[error("image `{image}`: ranking has {found} entries, fewer than k = {k}")]
    RankingTooShort {
        image: String,
        k: usize,
        found: usize,
    },
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynthConfig(String),
    #[error(
        "could not place {vocab} labels with squared separation >= {min_sq} in {dim} dimensions; \
         increase semantic_dim"
    )]
    LabelPlacement {
        vocab: usize,
        dim: usize,
        min_sq: f64,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported model format_version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
