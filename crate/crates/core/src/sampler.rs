//! Reverse process: discrete reverse-SDE recursion from a noisy start,
//! full enhancement, and early-stopped mid-output extraction.

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionState;
use crate::error::{Error, Result};
use crate::metrics::residual_noise_power;
use crate::rng::{complex_normal_spectrum, seeded, SimRng};
use crate::schedule::{Grid, Schedule};
use crate::score::ScoreFn;
use crate::sde::{diffusion_g, drift_y};
use crate::spectral::{SpectralTransform, Waveform};
use crate::spectrum::ComplexSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    Full,
    EarlyStop,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "early-stop" | "early_stop" => Ok(Self::EarlyStop),
            other => Err(Error::InvalidConfig(format!("unknown sampler mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub k1: usize,
    pub seed: u64,
    pub mode: SamplerMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 25,
            k1: 12,
            seed: 0,
            mode: SamplerMode::Full,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("K must be >= 2, got {}", self.k)));
        }
        if self.mode == SamplerMode::EarlyStop {
            self.validate_k1()?;
        }
        Ok(())
    }

    fn validate_k1(&self) -> Result<()> {
        if self.k1 < 1 || self.k1 > self.k {
            return Err(Error::InvalidConfig(format!(
                "K1 must lie in [1, K = {}], got {}",
                self.k, self.k1
            )));
        }
        Ok(())
    }
}

/// `S_K ~ CN(α(T)·Y, G(T)²·I)` at `τ = T`.
pub fn init_state(y: &ComplexSpectrum, schedule: &Schedule, rng: &mut SimRng) -> Result<DiffusionState> {
    if !y.is_finite() {
        return Err(Error::NonFinite("noisy spectrum"));
    }
    let t = schedule.t_max;
    let z = complex_normal_spectrum(y.frames(), y.bins(), rng);
    let s = y.lin_comb(schedule.alpha(t)?, &z, schedule.sd(t)?)?;
    Ok(DiffusionState { s, tau: t })
}

/// `S_{k−1} = S_k − [f_k(S_k, Y) − g²·Ψ(S_k, Y, τ_k)]·Δ + g·√Δ·Z` with the
/// given draw and diffusion coefficient.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_with<P: ScoreFn + ?Sized>(
    state: &DiffusionState,
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    grid: &Grid,
    k: usize,
    z: &ComplexSpectrum,
    g: f64,
) -> Result<DiffusionState> {
    if k < 2 || k > grid.len() {
        return Err(Error::StepOutOfRange { k, max: grid.len() });
    }
    let tau = grid.tau(k);
    let at = DiffusionState {
        s: state.s.clone(),
        tau,
    };
    let f = drift_y(&at, y, schedule)?;
    let score = psi.evaluate(&state.s, y, tau)?;
    let delta = grid.delta();
    let g2 = g * g;
    let mut next = state.s.clone();
    for (((n, fv), sv), zv) in next
        .as_mut_slice()
        .iter_mut()
        .zip(f.as_slice())
        .zip(score.as_slice())
        .zip(z.as_slice())
    {
        *n -= (fv - sv * g2) * delta;
        *n += zv * (g * delta.sqrt());
    }
    if !next.is_finite() {
        return Err(Error::SamplerDiverged { k });
    }
    Ok(DiffusionState {
        s: next,
        tau: grid.tau(k - 1),
    })
}

/// One reverse step from `τ_k` to `τ_{k−1}` with a fresh Gaussian draw.
pub fn reverse_step<P: ScoreFn + ?Sized>(
    state: &DiffusionState,
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    grid: &Grid,
    k: usize,
    rng: &mut SimRng,
) -> Result<DiffusionState> {
    if k < 2 || k > grid.len() {
        return Err(Error::StepOutOfRange { k, max: grid.len() });
    }
    let g = diffusion_g(schedule, grid.tau(k))?;
    let z = complex_normal_spectrum(y.frames(), y.bins(), rng);
    reverse_step_with(state, y, psi, schedule, grid, k, &z, g)
}

/// Denoised, rescaled interpolation estimate `V̂ = (S + G²·Ψ)/α`.
pub fn extract_v_hat<P: ScoreFn + ?Sized>(
    state: &DiffusionState,
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
) -> Result<ComplexSpectrum> {
    let alpha = schedule.alpha(state.tau)?;
    if alpha == 0.0 {
        return Err(Error::InvalidConfig(format!("alpha vanishes at tau {}", state.tau)));
    }
    let g2 = schedule.sd(state.tau)?.powi(2);
    let score = psi.evaluate(&state.s, y, state.tau)?;
    Ok(state.s.lin_comb(1.0 / alpha, &score, g2 / alpha)?)
}

/// Per-step record of a reverse run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostic {
    pub k: usize,
    pub tau: f64,
    /// Mean `|V̂ − X|²` when a clean reference is known.
    pub residual_noise: Option<f64>,
    pub state_norm: f64,
}

/// Runs `steps` reverse steps from a fresh `S_K`, calling `observe` on the
/// start state and after every step.
pub fn run_reverse<P: ScoreFn + ?Sized>(
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    grid: &Grid,
    steps: usize,
    rng: &mut SimRng,
    observe: &mut dyn FnMut(usize, &DiffusionState) -> Result<()>,
) -> Result<DiffusionState> {
    let kmax = grid.len();
    if steps >= kmax {
        return Err(Error::StepOutOfRange { k: kmax - steps, max: kmax });
    }
    let mut state = init_state(y, schedule, rng)?;
    observe(kmax, &state)?;
    for k in ((kmax - steps + 1)..=kmax).rev() {
        state = reverse_step(&state, y, psi, schedule, grid, k, rng)?;
        observe(k - 1, &state)?;
    }
    Ok(state)
}

/// Collects [`StepDiagnostic`]s; pass the clean spectrum to fill the
/// residual-noise column.
pub fn diagnostics_observer<'a, P: ScoreFn + ?Sized>(
    y: &'a ComplexSpectrum,
    psi: &'a P,
    schedule: &'a Schedule,
    reference: Option<&'a ComplexSpectrum>,
    out: &'a mut Vec<StepDiagnostic>,
) -> impl FnMut(usize, &DiffusionState) -> Result<()> + 'a {
    move |k, state| {
        let residual_noise = match reference {
            Some(x) => Some(residual_noise_power(&extract_v_hat(state, y, psi, schedule)?, x)?),
            None => None,
        };
        out.push(StepDiagnostic {
            k,
            tau: state.tau,
            residual_noise,
            state_norm: state.s.norm_sqr().sqrt(),
        });
        Ok(())
    }
}

/// Full reverse process down to `S_1` at `τ = ε`, returned as the enhanced
/// compressed spectrum.
pub fn enhance_spectrum<P: ScoreFn + ?Sized>(
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    observe: Option<&mut dyn FnMut(usize, &DiffusionState) -> Result<()>>,
) -> Result<ComplexSpectrum> {
    cfg.validate()?;
    let grid = schedule.grid(cfg.k)?;
    let mut rng = seeded(cfg.seed);
    let mut noop = |_: usize, _: &DiffusionState| Ok(());
    let observe = observe.unwrap_or(&mut noop);
    Ok(run_reverse(y, psi, schedule, &grid, cfg.k - 1, &mut rng, observe)?.s)
}

/// Number of reverse steps the early-stop path takes for `K1`; `K1 = K`
/// stops at `S_1`, the last grid point.
pub fn early_stop_steps(cfg: &SamplerConfig) -> usize {
    cfg.k1.min(cfg.k - 1)
}

/// `K1` reverse steps then `V̂` at `τ_{K−K1}`.
pub fn early_stop_spectrum<P: ScoreFn + ?Sized>(
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    observe: Option<&mut dyn FnMut(usize, &DiffusionState) -> Result<()>>,
) -> Result<ComplexSpectrum> {
    cfg.validate()?;
    cfg.validate_k1()?;
    let grid = schedule.grid(cfg.k)?;
    let mut rng = seeded(cfg.seed);
    let mut noop = |_: usize, _: &DiffusionState| Ok(());
    let observe = observe.unwrap_or(&mut noop);
    let state = run_reverse(y, psi, schedule, &grid, early_stop_steps(cfg), &mut rng, observe)?;
    extract_v_hat(&state, y, psi, schedule)
}

/// Waveform-level enhancement in either sampler mode. The output has the
/// same length as the input.
pub fn enhance_waveform<P: ScoreFn + ?Sized>(
    noisy: &Waveform,
    y: &ComplexSpectrum,
    psi: &P,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    transform: &SpectralTransform,
) -> Result<Waveform> {
    let spec = match cfg.mode {
        SamplerMode::Full => enhance_spectrum(y, psi, schedule, cfg, None)?,
        SamplerMode::EarlyStop => early_stop_spectrum(y, psi, schedule, cfg, None)?,
    };
    transform
        .synthesize(&spec, noisy.sample_rate())?
        .with_len(noisy.len())
}

/// Analyze → reverse process → synthesize.
pub fn enhance<P: ScoreFn + ?Sized>(
    noisy: &Waveform,
    psi: &P,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    transform: &SpectralTransform,
) -> Result<Waveform> {
    let full = SamplerConfig {
        mode: SamplerMode::Full,
        ..*cfg
    };
    let y = transform.analyze(noisy)?;
    enhance_waveform(noisy, &y, psi, schedule, &full, transform)
}

/// Early-stopped variant of [`enhance`] returning the synthesized `V̂`.
pub fn enhance_early_stop<P: ScoreFn + ?Sized>(
    noisy: &Waveform,
    psi: &P,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    transform: &SpectralTransform,
) -> Result<Waveform> {
    let es = SamplerConfig {
        mode: SamplerMode::EarlyStop,
        ..*cfg
    };
    let y = transform.analyze(noisy)?;
    enhance_waveform(noisy, &y, psi, schedule, &es, transform)
}
