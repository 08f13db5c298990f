//! Score estimators `Ψ(S, Y, τ)` and the denoising score-matching objective.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{ModelConfig, PatchMlp};
pub use train::{moving_average, train_small_model, Optimizer, TrainConfig, TrainOutcome, TrainingPair};

use rand::Rng;

use crate::diffusion::{analytic_score, forward_sample, DiffusionState};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::schedule::Schedule;
use crate::spectrum::ComplexSpectrum;

/// Estimator of the conditional score. Implementations return a spectrum of
/// the same shape as `s`.
pub trait ScoreFn: Sync {
    fn evaluate(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum>;
}

impl<T: ScoreFn + ?Sized> ScoreFn for &T {
    fn evaluate(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum> {
        (**self).evaluate(s, y, tau)
    }
}

impl<T: ScoreFn + ?Sized> ScoreFn for Box<T> {
    fn evaluate(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum> {
        (**self).evaluate(s, y, tau)
    }
}

/// Exact conditional score computed from the clean spectrum. Only usable
/// where the clean reference is known.
#[derive(Debug, Clone)]
pub struct OracleScore {
    x: ComplexSpectrum,
    schedule: Schedule,
}

impl OracleScore {
    pub fn new(x: ComplexSpectrum, schedule: Schedule) -> Self {
        Self { x, schedule }
    }
}

pub fn oracle_score(x: ComplexSpectrum, schedule: Schedule) -> OracleScore {
    OracleScore::new(x, schedule)
}

impl ScoreFn for OracleScore {
    fn evaluate(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum> {
        let state = DiffusionState { s: s.clone(), tau };
        analytic_score(&state, &self.x, y, &self.schedule)
    }
}

/// `Ψ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

impl ScoreFn for ZeroScore {
    fn evaluate(&self, s: &ComplexSpectrum, _y: &ComplexSpectrum, _tau: f64) -> Result<ComplexSpectrum> {
        Ok(ComplexSpectrum::zeros(s.frames(), s.bins()))
    }
}

/// Draws `τ ~ U(ε, T]`.
pub fn sample_tau(schedule: &Schedule, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.gen();
    schedule.t_max - u * (schedule.t_max - schedule.epsilon)
}

/// Monte-Carlo estimate of the weighted objective
/// `Σ_q ‖G(τ_q)·Ψ(S_q, Y_q, τ_q) + Z_q‖² / (Q·L·M)`.
///
/// For each pair, in order, one `τ` and then one full Gaussian draw are
/// taken from `rng`.
pub fn dsm_loss<P: ScoreFn + ?Sized>(
    psi: &P,
    batch: &[TrainingPair],
    schedule: &Schedule,
    rng: &mut SimRng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for pair in batch {
        let tau = sample_tau(schedule, rng);
        let (state, draw) = forward_sample(&pair.x, &pair.y, schedule, tau, rng)?;
        let g = schedule.sd(tau)?;
        let out = psi.evaluate(&state.s, &pair.y, tau)?;
        let residual = out.lin_comb(g, &draw.z, 1.0)?;
        total += residual.norm_sqr() / residual.len() as f64;
    }
    Ok(total / batch.len() as f64)
}
