use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("unsupported STFT configuration: {0}")]
    UnsupportedStft(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("too few frames: need at least {needed}, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("no channels")]
    NoChannels,

    #[error("degenerate mask in subband {subband}: {which} weight sum {sum:e} below {threshold:e}")]
    DegenerateMask {
        subband: usize,
        which: &'static str,
        sum: f64,
        threshold: f64,
    },

    #[error("noise covariance not invertible in subband {subband}")]
    SingularCovariance { subband: usize },

    #[error("no desired signal in subband {subband} (|trace| = {trace:e})")]
    NoDesiredSignal { subband: usize, trace: f64 },

    #[error("no valid reference channel candidate")]
    NoReferenceCandidate,

    #[error("invalid channel index {index} (have {channels})")]
    InvalidChannel { index: usize, channels: usize },

    #[error("reference signal is identically zero")]
    ZeroReference,

    #[error("noise signal has zero energy")]
    ZeroNoise,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("weights: {0}")]
    Weights(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("wav: {0}")]
    Wav(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Wav(e.to_string())
    }
}
