use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("degenerate range: max == min ({0})")]
    DegenerateRange(f64),

    #[error("negative sample {0} not allowed under log1p-max normalization")]
    NegativeInput(f64),

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    IndexOutOfBounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("unknown wavelet family `{0}`")]
    UnknownFamily(String),

    #[error("signal too short for wavelet analysis: length {0} < 2")]
    SignalTooShort(usize),

    #[error("invalid number of levels {levels}: {reason}")]
    InvalidLevels { levels: usize, reason: String },

    #[error("inconsistent pyramid: {0}")]
    InconsistentPyramid(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("quantization overflow: weight {0} exceeds binary16 range")]
    QuantizationOverflow(f64),

    #[error("non-finite weight {0}")]
    NonFinite(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("budget {budget} below minimum {minimum} parameters")]
    BudgetTooSmall { budget: usize, minimum: usize },

    #[error("out-of-bounds box: {0}")]
    OutOfBoundsBox(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncation {
        what: String,
        expected: u64,
        actual: u64,
    },

    #[error("malformed model header: {0}")]
    MalformedHeader(String),

    #[error("limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("fortran-order arrays are not supported")]
    FortranOrder,

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("malformed npy header: {0}")]
    MalformedNpy(String),

    #[error("size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error beneath any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), Error::Divergence { .. })
    }
}
