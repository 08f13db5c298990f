//! Forward SDE `dS = f(S, Y, τ)dτ + g(τ)dW` of the interpolating diffusion,
//! its noise-form drift, and Euler–Maruyama simulation used to check that
//! the SDE marginals reproduce the closed-form state equation.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::diffusion::{conditional_mean, DiffusionState};
use crate::error::{Error, Result};
use crate::rng::{complex_normal, split};
use crate::schedule::Schedule;
use crate::spectrum::ComplexSpectrum;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeCoefficients {
    pub drift: ComplexSpectrum,
    pub diffusion_g: f64,
}

/// `f = p·S + q·Y` with `p = d ln(αλ)/dτ` and `q = −α·d ln λ/dτ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDrift {
    pub state_coef: f64,
    pub cond_coef: f64,
}

pub fn drift_y_affine(schedule: &Schedule, tau: f64) -> Result<AffineDrift> {
    Ok(AffineDrift {
        state_coef: schedule.dlog_alpha_lambda(tau)?,
        cond_coef: -schedule.alpha(tau)? * schedule.dlog_lambda(tau)?,
    })
}

pub fn drift_y(
    state: &DiffusionState,
    y: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<ComplexSpectrum> {
    let a = drift_y_affine(schedule, state.tau)?;
    state.s.lin_comb(a.state_coef, y, a.cond_coef)
}

/// Noise form `f = (d ln α/dτ)·S + α·(dη/dτ)·N`.
pub fn drift_n(
    state: &DiffusionState,
    n: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<ComplexSpectrum> {
    let tau = state.tau;
    state.s.lin_comb(
        schedule.dlog_alpha(tau)?,
        n,
        schedule.alpha(tau)? * schedule.deta(tau)?,
    )
}

/// `g² = dG²/dτ − 2G²·d ln(αλ)/dτ`, which for the VP variants is
/// `β·α² + (1 − α²)(β + 2γ)`.
pub fn diffusion_g_sqr(schedule: &Schedule, tau: f64) -> Result<f64> {
    let g2 = schedule.sd(tau)?.powi(2);
    let value = schedule.dsd_sqr(tau)? - 2.0 * g2 * schedule.dlog_alpha_lambda(tau)?;
    if value < 0.0 {
        return Err(Error::NegativeRadicand { tau, value });
    }
    Ok(value)
}

pub fn diffusion_g(schedule: &Schedule, tau: f64) -> Result<f64> {
    Ok(diffusion_g_sqr(schedule, tau)?.sqrt())
}

pub fn coefficients(
    state: &DiffusionState,
    y: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<SdeCoefficients> {
    Ok(SdeCoefficients {
        drift: drift_y(state, y, schedule)?,
        diffusion_g: diffusion_g(schedule, state.tau)?,
    })
}

/// Splits `dU/dτ` into the amplitude term `(dα/dτ)·U/α` and the
/// target-noise term `α·(dη/dτ)·N`.
pub fn decompose_mean_ode(
    u: &ComplexSpectrum,
    n: &ComplexSpectrum,
    schedule: &Schedule,
    tau: f64,
) -> Result<(ComplexSpectrum, ComplexSpectrum)> {
    u.ensure_same_shape(n)?;
    if tau <= 0.0 {
        return Err(Error::TauOutOfRange {
            tau,
            lo: 0.0,
            hi: schedule.t_max,
        });
    }
    let amplitude = u.scale(schedule.dlog_alpha(tau)?);
    let target_noise = n.scale(schedule.alpha(tau)? * schedule.deta(tau)?);
    Ok((amplitude, target_noise))
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Times at which to record statistics; each must land on the step grid.
    pub checkpoints: Vec<f64>,
    pub seed: u64,
}

/// Per-bin empirical statistics of the simulated paths at one time.
#[derive(Debug, Clone)]
pub struct EmCheckpoint {
    pub tau: f64,
    pub mean: Vec<Complex64>,
    /// Unbiased `E|S − mean|²` per bin.
    pub variance: Vec<f64>,
    /// Standard errors of the real and imaginary parts of `mean`.
    pub stderr: Vec<(f64, f64)>,
}

/// One row of a verification export.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRow {
    pub quantity: String,
    pub tau: f64,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
}

impl EmCheckpoint {
    /// Rows comparing this checkpoint against the closed-form mean `u` and
    /// variance `g2`.
    pub fn rows(&self, u: &ComplexSpectrum, g2: f64) -> Vec<VerificationRow> {
        let mut rows = Vec::new();
        for (i, (m, &u)) in self.mean.iter().zip(u.as_slice()).enumerate() {
            rows.push(VerificationRow {
                quantity: format!("mean_re[{i}]"),
                tau: self.tau,
                analytic: u.re,
                empirical: m.re,
                stderr: self.stderr[i].0,
            });
            rows.push(VerificationRow {
                quantity: format!("mean_im[{i}]"),
                tau: self.tau,
                analytic: u.im,
                empirical: m.im,
                stderr: self.stderr[i].1,
            });
            rows.push(VerificationRow {
                quantity: format!("var[{i}]"),
                tau: self.tau,
                analytic: g2,
                empirical: self.variance[i],
                stderr: f64::NAN,
            });
        }
        rows
    }
}

const EM_CHUNKS: usize = 64;

#[derive(Clone)]
struct Moments {
    sum: Vec<Complex64>,
    sum_re2: Vec<f64>,
    sum_im2: Vec<f64>,
}

impl Moments {
    fn new(bins: usize) -> Self {
        Self {
            sum: vec![Complex64::new(0.0, 0.0); bins],
            sum_re2: vec![0.0; bins],
            sum_im2: vec![0.0; bins],
        }
    }

    fn push(&mut self, s: &[Complex64]) {
        for (i, v) in s.iter().enumerate() {
            self.sum[i] += v;
            self.sum_re2[i] += v.re * v.re;
            self.sum_im2[i] += v.im * v.im;
        }
    }

    fn merge(&mut self, other: &Self) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_re2[i] += other.sum_re2[i];
            self.sum_im2[i] += other.sum_im2[i];
        }
    }
}

fn checkpoint_steps(cfg: &EmConfig, t_max: f64) -> Result<Vec<usize>> {
    let h = t_max / cfg.n_steps as f64;
    cfg.checkpoints
        .iter()
        .map(|&tau| {
            let idx = (tau / h).round();
            if !(0.0..=cfg.n_steps as f64).contains(&idx) || (idx * h - tau).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint {tau} is not on the {}-step grid",
                    cfg.n_steps
                )));
            }
            Ok(idx as usize)
        })
        .collect()
}

/// Euler–Maruyama integration of the forward SDE from `S(0) = X` to `T`.
///
/// Paths are split into a fixed number of chunks, each with its own random
/// stream, so results depend only on `(seed, n_paths, n_steps)`.
pub fn simulate_forward_em(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    cfg: &EmConfig,
) -> Result<Vec<EmCheckpoint>> {
    x.ensure_same_shape(y)?;
    if cfg.n_paths < 2 || cfg.n_steps == 0 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 paths and 1 step, got {} and {}",
            cfg.n_paths, cfg.n_steps
        )));
    }
    let stops = checkpoint_steps(cfg, schedule.t_max)?;
    let h = schedule.t_max / cfg.n_steps as f64;
    let sqrt_h = h.sqrt();
    let coefs = (0..cfg.n_steps)
        .map(|n| {
            let tau = n as f64 * h;
            Ok((drift_y_affine(schedule, tau)?, diffusion_g(schedule, tau)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let bins = x.len();
    let x0 = x.as_slice();
    let yv = y.as_slice();

    let chunk_moments: Vec<Vec<Moments>> = (0..EM_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * cfg.n_paths / EM_CHUNKS;
            let hi = (chunk + 1) * cfg.n_paths / EM_CHUNKS;
            let mut rng = split(cfg.seed, chunk as u64);
            let mut moments = vec![Moments::new(bins); stops.len()];
            let mut s = vec![Complex64::new(0.0, 0.0); bins];
            for _ in lo..hi {
                s.copy_from_slice(x0);
                for (c, &stop) in stops.iter().enumerate() {
                    if stop == 0 {
                        moments[c].push(&s);
                    }
                }
                for (n, (drift, g)) in coefs.iter().enumerate() {
                    for (si, yi) in s.iter_mut().zip(yv) {
                        let f = *si * drift.state_coef + yi * drift.cond_coef;
                        *si += f * h + complex_normal(&mut rng) * (g * sqrt_h);
                    }
                    for (c, &stop) in stops.iter().enumerate() {
                        if stop == n + 1 {
                            moments[c].push(&s);
                        }
                    }
                }
            }
            moments
        })
        .collect();

    let n = cfg.n_paths as f64;
    Ok(stops
        .iter()
        .enumerate()
        .map(|(c, &stop)| {
            let mut total = Moments::new(bins);
            for m in &chunk_moments {
                total.merge(&m[c]);
            }
            let mean: Vec<Complex64> = total.sum.iter().map(|s| s / n).collect();
            let var_re: Vec<f64> = (0..bins)
                .map(|i| (total.sum_re2[i] - n * mean[i].re.powi(2)) / (n - 1.0))
                .collect();
            let var_im: Vec<f64> = (0..bins)
                .map(|i| (total.sum_im2[i] - n * mean[i].im.powi(2)) / (n - 1.0))
                .collect();
            EmCheckpoint {
                tau: stop as f64 * h,
                variance: (0..bins).map(|i| var_re[i] + var_im[i]).collect(),
                stderr: (0..bins)
                    .map(|i| ((var_re[i] / n).sqrt(), (var_im[i] / n).sqrt()))
                    .collect(),
                mean,
            }
        })
        .collect())
}

/// Exact expectation of the Euler–Maruyama iterate after `n_steps` steps
/// to `T`. The drift is affine, so the expectation follows the noiseless
/// Euler recursion.
pub fn em_expected_mean(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    n_steps: usize,
) -> Result<ComplexSpectrum> {
    x.ensure_same_shape(y)?;
    let h = schedule.t_max / n_steps as f64;
    let mut m = x.clone();
    for n in 0..n_steps {
        let d = drift_y_affine(schedule, n as f64 * h)?;
        m = m.zip_map(y, |s, y| s + (s * d.state_coef + y * d.cond_coef) * h)?;
    }
    Ok(m)
}

/// `‖E[S_EM(T)] − U(T)‖` for the given resolution.
pub fn em_mean_bias(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    n_steps: usize,
) -> Result<f64> {
    let m = em_expected_mean(x, y, schedule, n_steps)?;
    let u = conditional_mean(x, y, schedule, schedule.t_max)?;
    Ok(m.distance_sqr(&u)?.sqrt())
}
