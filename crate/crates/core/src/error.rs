use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad NIfTI magic {0:?}; only single-file \"n+1\" volumes are supported")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated data: need {needed} bytes, have {available}")]
    TruncatedData { needed: u64, available: u64 },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("rank {0} is outside the supported range 1..=7")]
    BadRank(usize),

    #[error("duplicate patient id {0:?}")]
    DuplicatePatient(String),
    #[error("patient {0:?} has non-positive survival time")]
    NonPositiveTime(String),
    #[error("patient {0:?} has event flag {1:?}, expected 0 or 1")]
    BadEventFlag(String, String),
    #[error("manifest: {0}")]
    Manifest(String),

    #[error("zero extent in {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("latent dimension {0} is not a perfect square")]
    NonSquareDim(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("batch standardization needs at least 2 samples in training mode, got {0}")]
    DegenerateBatch(usize),
    #[error("bin label {label} out of range for {bins} bins")]
    LabelOutOfRange { label: usize, bins: usize },
    #[error("need at least {needed} distinct event times, found {found}")]
    TooFewEvents { needed: usize, found: usize },
    #[error("no comparable pairs for concordance")]
    NoComparablePairs,
    #[error("region {0} is empty")]
    EmptyRegion(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("patient {0:?} has no tumor mask")]
    MissingMask(String),

    #[error("config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
