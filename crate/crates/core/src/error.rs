use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("waveform is empty")]
    EmptyWaveform,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("tau {tau} outside [{lo}, {hi}]")]
    TauOutOfRange { tau: f64, lo: f64, hi: f64 },

    #[error("density is degenerate at tau {0} (G = 0)")]
    DegenerateDensity(f64),

    #[error("diffusion radicand is negative ({value}) at tau {tau}")]
    NegativeRadicand { tau: f64, value: f64 },

    #[error("{0} has zero power")]
    ZeroPower(&'static str),

    #[error("reverse step index {k} outside [2, {max}]")]
    StepOutOfRange { k: usize, max: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("sampler state became non-finite at step k = {k}")]
    SamplerDiverged { k: usize },

    #[error("checkpoint schedule hash {found} does not match {expected}")]
    ScheduleMismatch { expected: String, found: String },

    #[error("unsupported WAV layout in {path}: {detail}")]
    WavFormat { path: PathBuf, detail: String },

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
