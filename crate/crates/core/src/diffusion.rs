//! Forward process: the clean→noisy interpolation, the state equation
//! `S(τ) = α(τ)V(τ) + G(τ)Z`, and the conditional Gaussian it induces.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::{complex_normal_spectrum, SimRng};
use crate::schedule::Schedule;
use crate::spectrum::ComplexSpectrum;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub s: ComplexSpectrum,
    pub tau: f64,
}

impl DiffusionState {
    pub fn new(s: ComplexSpectrum, tau: f64, schedule: &Schedule) -> Result<Self> {
        schedule.check_tau(tau)?;
        if !s.is_finite() {
            return Err(Error::NonFinite("diffusion state"));
        }
        Ok(Self { s, tau })
    }
}

/// Where in the caller's random stream a draw was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawProvenance {
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGaussianDraw {
    pub z: ComplexSpectrum,
    pub provenance: DrawProvenance,
}

impl ComplexGaussianDraw {
    pub fn sample(frames: usize, bins: usize, rng: &mut SimRng) -> Self {
        let provenance = DrawProvenance {
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        };
        Self {
            z: complex_normal_spectrum(frames, bins, rng),
            provenance,
        }
    }
}

/// `V(τ) = λ(τ)X + (1 − λ(τ))Y`.
pub fn interpolate(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    tau: f64,
) -> Result<ComplexSpectrum> {
    let lambda = schedule.lambda(tau)?;
    let eta = schedule.eta(tau)?;
    x.lin_comb(lambda, y, eta)
}

/// `U(τ) = α(τ)V(τ)`, the mean of `S(τ)` given the pair.
pub fn conditional_mean(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    tau: f64,
) -> Result<ComplexSpectrum> {
    let alpha = schedule.alpha(tau)?;
    Ok(interpolate(x, y, schedule, tau)?.scale(alpha))
}

/// State equation evaluated with a given draw `Z`.
pub fn state_from_draw(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    tau: f64,
    z: &ComplexSpectrum,
) -> Result<ComplexSpectrum> {
    let alpha = schedule.alpha(tau)?;
    let g = schedule.sd(tau)?;
    interpolate(x, y, schedule, tau)?.lin_comb(alpha, z, g)
}

/// Samples `S(τ)` and returns the draw that produced it.
pub fn forward_sample(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
    tau: f64,
    rng: &mut SimRng,
) -> Result<(DiffusionState, ComplexGaussianDraw)> {
    x.ensure_same_shape(y)?;
    schedule.check_tau(tau)?;
    let draw = ComplexGaussianDraw::sample(x.frames(), x.bins(), rng);
    let s = state_from_draw(x, y, schedule, tau, &draw.z)?;
    Ok((DiffusionState { s, tau }, draw))
}

fn positive_sd(schedule: &Schedule, tau: f64) -> Result<f64> {
    let g = schedule.sd(tau)?;
    if g <= 0.0 {
        return Err(Error::DegenerateDensity(tau));
    }
    Ok(g)
}

/// `ln p(S | X, Y) = −LM·ln(πG²) − ‖S − U‖²/G²`.
pub fn log_density(
    state: &DiffusionState,
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<f64> {
    let g2 = positive_sd(schedule, state.tau)?.powi(2);
    let u = conditional_mean(x, y, schedule, state.tau)?;
    let quad = state.s.distance_sqr(&u)?;
    let lm = state.s.len() as f64;
    Ok(-lm * (std::f64::consts::PI * g2).ln() - quad / g2)
}

/// Score with respect to the conjugate state, `−(S − U)/G²`.
pub fn analytic_score(
    state: &DiffusionState,
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<ComplexSpectrum> {
    let g2 = positive_sd(schedule, state.tau)?.powi(2);
    let u = conditional_mean(x, y, schedule, state.tau)?;
    state.s.zip_map(&u, |s, u| -(s - u) / g2)
}

/// Distance between the mean of the practical start state `α(T)·Y` and the
/// true mean `U(T)`. Equals `α(T)·λ(T)·‖Y − X‖`.
pub fn initial_error(
    x: &ComplexSpectrum,
    y: &ComplexSpectrum,
    schedule: &Schedule,
) -> Result<f64> {
    let t = schedule.t_max;
    let approx = y.scale(schedule.alpha(t)?);
    let exact = conditional_mean(x, y, schedule, t)?;
    Ok(approx.distance_sqr(&exact)?.sqrt())
}

/// Fills a spectrum with a constant, useful for scalar toys.
pub fn constant(frames: usize, bins: usize, v: Complex64) -> ComplexSpectrum {
    ComplexSpectrum::zeros(frames, bins).map(|_| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::schedule::Variant;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> ComplexSpectrum {
        ComplexSpectrum::from_bins(&[Complex64::new(v, 0.0)]).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn interpolation_endpoints_and_value() {
        let s = Schedule::default();
        let (x, y) = (scalar(1.0), scalar(3.0));
        assert_eq!(interpolate(&x, &y, &s, 0.0).unwrap(), x);
        for tau in [0.2, 0.9] {
            assert_eq!(interpolate(&x, &y, &Schedule::vpdm(), tau).unwrap(), x);
        }
        let v = interpolate(&x, &y, &s, 1.0).unwrap().get(0, 0);
        assert_relative_eq!(v.re, 2.553740, epsilon = 5e-7);
    }

    #[test]
    fn interpolation_is_target_noise_addition() {
        let s = Schedule::default();
        let x = ComplexSpectrum::from_bins(&[c(0.3, -0.2), c(1.0, 0.5)]).unwrap();
        let n = ComplexSpectrum::from_bins(&[c(-0.1, 0.4), c(0.2, 0.2)]).unwrap();
        let y = x.add(&n).unwrap();
        let tau = 0.37;
        let v = interpolate(&x, &y, &s, tau).unwrap();
        let alt = x.lin_comb(1.0, &n, s.eta(tau).unwrap()).unwrap();
        assert!(v.distance_sqr(&alt).unwrap().sqrt() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let s = Schedule::default();
        let a = ComplexSpectrum::zeros(2, 3);
        let b = ComplexSpectrum::zeros(3, 2);
        assert!(matches!(interpolate(&a, &b, &s, 0.5), Err(Error::ShapeMismatch { .. })));
        assert!(forward_sample(&a, &b, &s, 0.5, &mut seeded(0)).is_err());
    }

    #[test]
    fn conditional_mean_values() {
        let s = Schedule::default();
        let (x, y) = (scalar(1.0), scalar(3.0));
        assert_eq!(conditional_mean(&x, &y, &s, 0.0).unwrap(), x);
        let u = conditional_mean(&x, &y, &s, 0.5).unwrap().get(0, 0);
        // α(0.5)·(λ(0.5) + η(0.5)·3) with α = e^{-0.14375}, λ = e^{-0.75}.
        let oracle = (-0.14375f64).exp() * ((-0.75f64).exp() + 3.0 * (1.0 - (-0.75f64).exp()));
        assert_relative_eq!(u.re, oracle, max_relative = 1e-14);
        assert_relative_eq!(u.re, 1.780075, epsilon = 5e-7);
        let ve = Schedule::veidm();
        assert_eq!(
            conditional_mean(&x, &y, &ve, 0.5).unwrap(),
            interpolate(&x, &y, &ve, 0.5).unwrap()
        );
    }

    #[test]
    fn forward_sample_at_zero_is_clean() {
        let s = Schedule::default();
        let x = ComplexSpectrum::from_bins(&[c(0.3, -0.2), c(1.0, 0.5)]).unwrap();
        let y = x.scale(2.0);
        let (state, _) = forward_sample(&x, &y, &s, 0.0, &mut seeded(3)).unwrap();
        assert_eq!(state.s, x);
    }

    #[test]
    fn draw_records_stream_position() {
        let mut rng = seeded(11);
        let a = ComplexGaussianDraw::sample(1, 3, &mut rng);
        let b = ComplexGaussianDraw::sample(1, 3, &mut rng);
        assert_eq!(a.provenance.word_pos, 0);
        assert!(b.provenance.word_pos > a.provenance.word_pos);
        assert_ne!(a.z, b.z);
    }

    #[test]
    fn log_density_identities() {
        let s = Schedule::default();
        let x = ComplexSpectrum::from_bins(&[c(0.3, -0.2), c(1.0, 0.5), c(0.0, 0.1)]).unwrap();
        let y = x.scale(1.5);
        let tau = 0.6;
        let g = s.sd(tau).unwrap();
        let u = conditional_mean(&x, &y, &s, tau).unwrap();
        let at_mean = DiffusionState { s: u.clone(), tau };
        let lp0 = log_density(&at_mean, &x, &y, &s).unwrap();
        assert_relative_eq!(
            lp0,
            -3.0 * (std::f64::consts::PI * g * g).ln(),
            max_relative = 1e-14
        );
        let mut shifted = u.clone();
        shifted.set(0, 1, u.get(0, 1) + c(0.0, g));
        let lp1 = log_density(&DiffusionState { s: shifted, tau }, &x, &y, &s).unwrap();
        assert_relative_eq!(lp0 - lp1, 1.0, max_relative = 1e-12);

        let zero = DiffusionState { s: u, tau: 0.0 };
        assert!(matches!(log_density(&zero, &x, &y, &s), Err(Error::DegenerateDensity(_))));
        assert!(matches!(analytic_score(&zero, &x, &y, &s), Err(Error::DegenerateDensity(_))));
    }

    #[test]
    fn log_density_integrates_to_one() {
        // Grid quadrature over the two real dimensions of a single bin.
        let s = Schedule::default();
        let (x, y) = (scalar(0.4), scalar(-0.3));
        let tau = 0.5;
        let u = conditional_mean(&x, &y, &s, tau).unwrap().get(0, 0);
        let g = s.sd(tau).unwrap();
        let half = 8.0 * g;
        let n = 400;
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let re = u.re - half + (i as f64 + 0.5) * h;
                let im = u.im - half + (j as f64 + 0.5) * h;
                let st = DiffusionState {
                    s: ComplexSpectrum::from_bins(&[c(re, im)]).unwrap(),
                    tau,
                };
                total += log_density(&st, &x, &y, &s).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral = {total}");
    }

    #[test]
    fn score_known_draw_and_zero_at_mean() {
        let s = Schedule::default();
        let x = ComplexSpectrum::from_bins(&[c(0.3, -0.2), c(1.0, 0.5)]).unwrap();
        let y = x.scale(1.2);
        let tau = 0.5;
        let u = conditional_mean(&x, &y, &s, tau).unwrap();
        let score = analytic_score(&DiffusionState { s: u, tau }, &x, &y, &s).unwrap();
        assert!(score.norm_sqr() == 0.0);

        // Draw Z = 1 at a tau where G = 0.5: score = −Z/G = −2.
        let tau_half = solve_tau_for_sd(&s, 0.5);
        let z = constant(1, 2, c(1.0, 0.0));
        let st = state_from_draw(&x, &y, &s, tau_half, &z).unwrap();
        let score = analytic_score(&DiffusionState { s: st, tau: tau_half }, &x, &y, &s).unwrap();
        for v in score.as_slice() {
            assert_relative_eq!(v.re, -2.0, max_relative = 1e-9);
            assert!(v.im.abs() < 1e-9);
        }
    }

    fn solve_tau_for_sd(s: &Schedule, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s.sd(mid).unwrap() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn score_equals_negative_draw_over_sd() {
        let s = Schedule::default();
        let mut rng = seeded(5);
        let x = complex_normal_spectrum(3, 4, &mut rng);
        let y = complex_normal_spectrum(3, 4, &mut rng).add(&x).unwrap();
        for tau in [0.05, 0.5, 1.0] {
            let (state, draw) = forward_sample(&x, &y, &s, tau, &mut rng).unwrap();
            let score = analytic_score(&state, &x, &y, &s).unwrap();
            let g = s.sd(tau).unwrap();
            let expect = draw.z.scale(-1.0 / g);
            let rel = score.distance_sqr(&expect).unwrap().sqrt() / expect.norm_sqr().sqrt();
            assert!(rel < 1e-12, "rel err {rel}");
        }
    }

    #[test]
    fn initial_error_ratio_is_alpha_t() {
        let mut rng = seeded(9);
        let x = complex_normal_spectrum(2, 5, &mut rng);
        let y = complex_normal_spectrum(2, 5, &mut rng);
        let vp = Schedule::default();
        let ve = Schedule::veidm();
        assert_eq!(ve.variant, Variant::Veidm);
        let ratio = initial_error(&x, &y, &vp).unwrap() / initial_error(&x, &y, &ve).unwrap();
        assert_relative_eq!(ratio, vp.alpha(1.0).unwrap(), max_relative = 1e-9);
        assert_relative_eq!(ratio, 0.591555, epsilon = 5e-7);
    }
}
