use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate angle encoding: {0}")]
    DegenerateEncoding(&'static str),
    #[error("infeasible rt60 {rt60} s: Sabine absorption {alpha:.3} is not below 1")]
    InfeasibleRt60 { rt60: f64, alpha: f64 },
    #[error("placement error: {0}")]
    Placement(String),
    #[error("scene sampling exhausted after {0} draws")]
    SamplingExhausted(usize),
    #[error("degenerate source: {0}")]
    DegenerateSource(&'static str),
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),
    #[error("singular baseline geometry (rank {0})")]
    SingularGeometry(usize),
    #[error("covariance solve failed at frequency bin {bin}")]
    Solver { bin: usize },
    #[error("shape mismatch: {0}")]
    Alignment(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("snr {0} dB is outside the stratification range [-1, 10]")]
    SnrOutOfRange(f64),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("wav error in {path}: {err}")]
    Wav { path: PathBuf, err: hound::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
