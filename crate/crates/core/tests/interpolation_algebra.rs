use proptest::prelude::*;
use vpidm::diffusion::{forward_sample, initial_error, state_from_draw};
use vpidm::rng::{complex_normal_spectrum, seeded};
use vpidm::sde::{drift_y, drift_y_affine};
use vpidm::{diffusion::DiffusionState, Schedule};

fn no_interpolation() -> Schedule {
    Schedule {
        gamma: 0.0,
        ..Schedule::default()
    }
}

proptest! {
    #[test]
    fn zero_gamma_matches_vpdm_bit_for_bit(seed in any::<u64>(), tau in 0.04f64..=1.0) {
        let mut rng = seeded(seed);
        let x = complex_normal_spectrum(3, 5, &mut rng);
        let y = complex_normal_spectrum(3, 5, &mut rng);
        let z = complex_normal_spectrum(3, 5, &mut rng);
        let a = state_from_draw(&x, &y, &no_interpolation(), tau, &z).unwrap();
        let b = state_from_draw(&x, &y, &Schedule::vpdm(), tau, &z).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn veidm_drift_is_pull_towards_noisy(seed in any::<u64>(), tau in 0.01f64..=1.0) {
        let s = Schedule::veidm();
        let mut rng = seeded(seed);
        let y = complex_normal_spectrum(2, 4, &mut rng);
        let st = complex_normal_spectrum(2, 4, &mut rng);
        let a = drift_y_affine(&s, tau).unwrap();
        prop_assert_eq!(a.state_coef, -s.gamma);
        prop_assert_eq!(a.cond_coef, s.gamma);
        let f = drift_y(&DiffusionState { s: st.clone(), tau }, &y, &s).unwrap();
        let expected = y.sub(&st).unwrap().scale(s.gamma);
        prop_assert!(f.distance_sqr(&expected).unwrap().sqrt() <= 1e-14 * expected.norm_sqr().sqrt());
    }
}

#[test]
fn zero_gamma_forward_samples_share_the_stream() {
    let mut rng = seeded(4);
    let x = complex_normal_spectrum(4, 6, &mut rng);
    let y = complex_normal_spectrum(4, 6, &mut rng);
    let (a, _) = forward_sample(&x, &y, &no_interpolation(), 0.7, &mut seeded(11)).unwrap();
    let (b, _) = forward_sample(&x, &y, &Schedule::vpdm(), 0.7, &mut seeded(11)).unwrap();
    assert_eq!(a.s, b.s);
}

#[test]
fn initial_error_ratio_is_alpha_at_t() {
    let mut rng = seeded(21);
    let x = complex_normal_spectrum(8, 16, &mut rng);
    let y = x.add(&complex_normal_spectrum(8, 16, &mut rng)).unwrap();
    let vp = Schedule::default();
    let ratio = initial_error(&x, &y, &vp).unwrap() / initial_error(&x, &y, &Schedule::veidm()).unwrap();
    let alpha_t = vp.alpha(vp.t_max).unwrap();
    assert!((ratio - alpha_t).abs() <= 1e-9 * alpha_t);
    assert!((ratio - 0.591555).abs() <= 5e-7, "{ratio}");
}
