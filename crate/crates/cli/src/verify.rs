//! Self-verification suite: coefficient finite differences, forward-SDE
//! Monte Carlo and score-gradient checks.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use vpidm::diffusion::{analytic_score, conditional_mean, log_density, DiffusionState};
use vpidm::rng::{complex_normal_spectrum, seeded};
use vpidm::score::{dsm_loss, OracleScore, TrainingPair, ZeroScore};
use vpidm::sde::{diffusion_g, drift_y, drift_y_affine, simulate_forward_em, EmConfig};
use vpidm::{ComplexSpectrum, Result, Schedule, Variant};

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub quantity: String,
    pub tau: f64,
    pub expected: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub variant: Variant,
    /// Relative fault injected into the closed-form `g`.
    pub perturb_g: f64,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Vpidm,
            perturb_g: 0.0,
            paths: 10_000,
            steps: 1000,
            seed: 0,
        }
    }
}

fn row(check: &str, quantity: String, tau: f64, expected: f64, measured: f64, tolerance: f64, passed: bool) -> CheckRow {
    CheckRow {
        check: check.into(),
        quantity,
        tau,
        expected,
        measured,
        tolerance,
        passed,
    }
}

/// Second-order derivative estimate that stays inside `[0, T]`.
pub fn derivative(f: impl Fn(f64) -> Result<f64>, tau: f64, t_max: f64) -> Result<f64> {
    let h = 1e-5f64.min(tau / 4.0);
    if tau + h <= t_max {
        Ok((f(tau + h)? - f(tau - h)?) / (2.0 * h))
    } else {
        Ok((3.0 * f(tau)? - 4.0 * f(tau - h)? + f(tau - 2.0 * h)?) / (2.0 * h))
    }
}

/// `dG²/dτ − 2G²·d ln(αλ)/dτ` from finite differences of the schedule.
pub fn radicand_fd(s: &Schedule, tau: f64) -> Result<f64> {
    let g2 = |t: f64| Ok(s.sd(t)?.powi(2));
    let log_al = |t: f64| Ok((s.alpha(t)? * s.lambda(t)?).ln());
    Ok(derivative(g2, tau, s.t_max)? - 2.0 * s.sd(tau)?.powi(2) * derivative(log_al, tau, s.t_max)?)
}

fn coefficient_checks(s: &Schedule, opts: &VerifyOptions, out: &mut Vec<CheckRow>) -> Result<()> {
    let mut rng = seeded(opts.seed);
    let g_of = |t: f64| -> Result<f64> { Ok(diffusion_g(s, t)? * (1.0 + opts.perturb_g)) };
    for i in 0..100 {
        let tau = s.t_max * (1.0 - rng.gen::<f64>()).max(1e-3);
        let fd = radicand_fd(s, tau)?;
        let closed = g_of(tau)?.powi(2);
        let rel = (closed - fd).abs() / fd.abs();
        out.push(row("g_finite_difference", format!("g2[{i}]"), tau, fd, closed, 1e-6, rel <= 1e-6));
    }
    if s.variant == Variant::Vpidm && *s == Schedule::default() {
        for (tau, expected) in [(0.0, 0.316228), (0.5, 1.341488)] {
            let g = g_of(tau)?;
            let ok = (g - expected).abs() <= 5e-7;
            out.push(row("g_spot_value", "g".into(), tau, expected, g, 5e-7, ok));
        }
    }
    Ok(())
}

fn em_checks(s: &Schedule, opts: &VerifyOptions, out: &mut Vec<CheckRow>) -> Result<()> {
    let mut rng = seeded(opts.seed ^ 0x5eed);
    let x = complex_normal_spectrum(1, 4, &mut rng);
    let y = x.add(&complex_normal_spectrum(1, 4, &mut rng).scale(0.5))?;
    let taus = [0.25, 0.5, 1.0].map(|t| t * s.t_max);
    let cfg = EmConfig {
        n_paths: opts.paths,
        n_steps: opts.steps,
        checkpoints: taus.to_vec(),
        seed: opts.seed,
    };
    for cp in simulate_forward_em(&x, &y, s, &cfg)? {
        let u = conditional_mean(&x, &y, s, cp.tau)?;
        let g2 = s.sd(cp.tau)?.powi(2);
        for r in cp.rows(&u, g2) {
            if r.quantity.starts_with("var") {
                let rel = (r.empirical - r.analytic).abs() / r.analytic;
                out.push(row("em_variance", r.quantity, r.tau, r.analytic, r.empirical, 0.05, rel <= 0.05));
            } else {
                let z = (r.empirical - r.analytic).abs() / r.stderr;
                out.push(row("em_mean", r.quantity, r.tau, r.analytic, r.empirical, 4.0 * r.stderr, z <= 4.0));
            }
        }
    }
    Ok(())
}

fn score_checks(s: &Schedule, opts: &VerifyOptions, out: &mut Vec<CheckRow>) -> Result<()> {
    let mut rng = seeded(opts.seed ^ 0x5c0e);
    let x = complex_normal_spectrum(1, 4, &mut rng);
    let y = x.add(&complex_normal_spectrum(1, 4, &mut rng).scale(0.5))?;
    let h = 1e-6;
    for i in 0..50 {
        let tau = s.t_max * rng.gen_range(0.05..1.0);
        let u = conditional_mean(&x, &y, s, tau)?;
        let st = u.add(&complex_normal_spectrum(1, 4, &mut rng).scale(s.sd(tau)?))?;
        let state = DiffusionState { s: st.clone(), tau };
        let analytic = analytic_score(&state, &x, &y, s)?;
        let mut worst = 0.0f64;
        for b in 0..4 {
            let lp = |d: Complex64| -> Result<f64> {
                let mut v = st.clone();
                v.set(0, b, v.get(0, b) + d);
                log_density(&DiffusionState { s: v, tau }, &x, &y, s)
            };
            let d_re = (lp(Complex64::new(h, 0.0))? - lp(Complex64::new(-h, 0.0))?) / (2.0 * h);
            let d_im = (lp(Complex64::new(0.0, h))? - lp(Complex64::new(0.0, -h))?) / (2.0 * h);
            let fd = Complex64::new(d_re, d_im) * 0.5;
            let a = analytic.get(0, b);
            worst = worst.max((fd - a).norm() / a.norm().max(1.0));
        }
        out.push(row("score_gradient", format!("state[{i}]"), tau, 0.0, worst, 1e-4, worst <= 1e-4));
    }

    let batch: Vec<TrainingPair> = (0..4)
        .map(|_| {
            let x = complex_normal_spectrum(4, 8, &mut rng);
            let y = x.add(&complex_normal_spectrum(4, 8, &mut rng).scale(0.5)).expect("same shape");
            TrainingPair { x, y }
        })
        .collect();
    let mut oracle_max = 0.0f64;
    for pair in &batch {
        let psi = OracleScore::new(pair.x.clone(), *s);
        oracle_max = oracle_max.max(dsm_loss(&psi, std::slice::from_ref(pair), s, &mut rng)?);
    }
    out.push(row("dsm_oracle", "loss".into(), f64::NAN, 0.0, oracle_max, 1e-20, oracle_max <= 1e-20));
    // 4·32 complex values per call, 80 calls → ~10⁴ samples.
    let calls = 80;
    let mut zero = 0.0;
    for _ in 0..calls {
        zero += dsm_loss(&ZeroScore, &batch, s, &mut rng)? / calls as f64;
    }
    out.push(row("dsm_zero_score", "loss".into(), f64::NAN, 1.0, zero, 0.05, (zero - 1.0).abs() <= 0.05));
    Ok(())
}

fn veidm_checks(s: &Schedule, out: &mut Vec<CheckRow>) -> Result<()> {
    let mut rng = seeded(17);
    let y = complex_normal_spectrum(2, 3, &mut rng);
    for i in 0..10 {
        let tau = s.t_max * rng.gen_range(0.01..1.0);
        let st = complex_normal_spectrum(2, 3, &mut rng);
        let a = drift_y_affine(s, tau)?;
        let exact = a.state_coef == -s.gamma && a.cond_coef == s.gamma;
        out.push(row(
            "veidm_drift_coefficients",
            format!("coef[{i}]"),
            tau,
            s.gamma,
            a.cond_coef,
            0.0,
            exact,
        ));
        let f = drift_y(&DiffusionState { s: st.clone(), tau }, &y, s)?;
        let expected: ComplexSpectrum = y.sub(&st)?.scale(s.gamma);
        let rel = f.distance_sqr(&expected)?.sqrt() / expected.norm_sqr().sqrt();
        out.push(row("veidm_drift", format!("drift[{i}]"), tau, 0.0, rel, 1e-14, rel <= 1e-14));
    }
    Ok(())
}

/// Runs the suite for the schedule's variant.
pub fn run_checks(base: &Schedule, opts: &VerifyOptions) -> Result<Vec<CheckRow>> {
    let s = base.with_variant(opts.variant);
    s.validate()?;
    let mut out = Vec::new();
    coefficient_checks(&s, opts, &mut out)?;
    em_checks(&s, opts, &mut out)?;
    score_checks(&s, opts, &mut out)?;
    if s.variant == Variant::Veidm {
        veidm_checks(&s, &mut out)?;
    }
    Ok(out)
}
