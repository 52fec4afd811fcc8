use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported dataset version {found} (expected {expected})")]
    DatasetVersion { found: u32, expected: u32 },

    #[error("dataset truncated: expected {expected} bytes, found {found}")]
    DatasetTruncated { expected: u64, found: u64 },

    #[error("dataset checksum mismatch")]
    DatasetChecksum,

    #[error("malformed dataset: {0}")]
    DatasetFormat(String),

    #[error("returns cannot be normalized: all {count} records have raw return {value}")]
    DegenerateReturns { count: usize, value: f64 },

    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{stage} training diverged at step {step}: {detail}")]
    TrainingDiverged {
        stage: &'static str,
        step: usize,
        detail: String,
    },

    #[error("sampler produced non-finite values at diffusion step {step}")]
    SamplerDiverged { step: usize },

    #[error("invalid diffusion step {t} (valid range 1..={max})")]
    DiffusionStep { t: usize, max: usize },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Other(String),
}

impl Error {
    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<diffservo_nn::NnError> for Error {
    fn from(e: diffservo_nn::NnError) -> Self {
        match e {
            diffservo_nn::NnError::Io(io) => Error::Io(io),
            diffservo_nn::NnError::Format(s) => Error::Checkpoint {
                path: PathBuf::new(),
                detail: s,
            },
        }
    }
}
