//! Interpolating diffusion models for speech enhancement in the compressed
//! complex STFT domain.

pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod sde;
pub mod spectral;
pub mod spectrum;
pub mod wav;

pub use error::{Error, Result};
pub use schedule::{Grid, Schedule, Variant};
pub use score::{OracleScore, ScoreFn};
pub use spectral::{CompressionConfig, SpectralTransform, StftConfig, Waveform};
pub use spectrum::ComplexSpectrum;
