use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("signal is empty")]
    EmptySignal,
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidSamplingRate(f64),
    #[error("start offset must be finite and non-negative, got {0}")]
    InvalidOffset(f64),
    #[error("channel lengths differ: {0}")]
    LengthMismatch(String),
    #[error("sampling rates differ: {0}")]
    SamplingRateMismatch(String),
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("window width {width} exceeds signal length {len}")]
    WidthExceedsLength { width: usize, len: usize },
    #[error("invalid band {low}..{high} Hz at fs = {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("signal of length {len} too short for filter (needs more than {min})")]
    SignalTooShort { len: usize, min: usize },
    #[error("signal duration {duration:.3} s shorter than required {required:.3} s")]
    TooShort { duration: f64, required: f64 },
    #[error("degenerate window starting at frame {start}: {reason}")]
    DegenerateWindow { start: usize, reason: &'static str },
    #[error("guide rate does not cover t = {0:.3} s")]
    GuideGap(f64),
    #[error("every channel is dead (zero variance)")]
    AllChannelsDead,
    #[error("all lag estimates rejected by the acceptance threshold")]
    AllRejected,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("sample too small: need at least {required}, got {actual}")]
    SampleTooSmall { required: usize, actual: usize },
    #[error("all observations are tied")]
    AllTied,
    #[error("series are misaligned: {0}")]
    MisalignedSeries(String),
    #[error("rank deficient: {below} of {total} eigenvalues below epsilon")]
    RankDeficient { below: usize, total: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}
