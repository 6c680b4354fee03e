use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    RateMismatch { left: u32, right: u32 },

    #[error("unsupported sample rate {rate} Hz (expected {expected} Hz; pass the resample option to convert)")]
    UnsupportedRate { rate: u32, expected: u32 },

    #[error("STFT parameters do not satisfy overlap-add: win_len={win_len}, hop={hop}")]
    NotOverlapAdd { win_len: usize, hop: usize },

    #[error("frequency points must span [0, {nyquist}] Hz and be strictly increasing")]
    BadFrequencyGrid { nyquist: f64 },

    #[error("audiogram exceeds catch-up level: {threshold} dB HL at {freq} Hz (must be < {eta})")]
    AudiogramExceedsCatchUp { freq: f64, threshold: f64, eta: f64 },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward already called on this tape; re-trace before differentiating again")]
    TapeConsumed,

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("gain table has {got} levels per band, expected {expected}")]
    TableMismatch { got: usize, expected: usize },

    #[error("signal is silent; level is undefined")]
    SilentSignal,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("missing fitted parameters for condition `{condition}`; {hint}")]
    MissingCondition { condition: String, hint: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
