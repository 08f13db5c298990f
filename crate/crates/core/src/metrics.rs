//! Objective quality measures.

use crate::error::{Error, Result};
use crate::spectral::Waveform;
use crate::spectrum::ComplexSpectrum;

pub const SI_SDR_CAP_DB: f64 = 80.0;
pub const LSD_DELTA: f64 = 1e-8;

fn check_lengths(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            expected: (reference.len(), 1),
            got: (estimate.len(), 1),
        });
    }
    Ok(())
}

/// Scale-invariant SDR in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let ee: f64 = e.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::ZeroPower("reference"));
    }
    if ee == 0.0 {
        return Err(Error::ZeroPower("estimate"));
    }
    let k = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = k * k * rr;
    let residual: f64 = r.iter().zip(e).map(|(a, b)| (b - k * a).powi(2)).sum();
    if residual == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_CAP_DB))
}

/// Mean per-frame SNR over non-overlapping frames, each clamped to
/// `[−10, 35]` dB. Frames where the reference is silent are skipped.
pub fn segmental_snr(reference: &Waveform, estimate: &Waveform, frame_len: usize) -> Result<f64> {
    check_lengths(reference, estimate)?;
    if frame_len == 0 {
        return Err(Error::InvalidConfig("frame length must be positive".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, e) in reference
        .samples()
        .chunks(frame_len)
        .zip(estimate.samples().chunks(frame_len))
    {
        let sig: f64 = r.iter().map(|v| v * v).sum();
        if sig == 0.0 {
            continue;
        }
        let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
        let snr = if noise == 0.0 { 35.0 } else { 10.0 * (sig / noise).log10() };
        total += snr.clamp(-10.0, 35.0);
        count += 1;
    }
    if count == 0 {
        return Err(Error::ZeroPower("reference"));
    }
    Ok(total / count as f64)
}

/// Mean `|v̂ − X|²` over all bins.
pub fn residual_noise_power(v_hat: &ComplexSpectrum, x: &ComplexSpectrum) -> Result<f64> {
    Ok(v_hat.distance_sqr(x)? / x.len() as f64)
}

/// RMS over bins of `20·(log10(|a|+δ) − log10(|b|+δ))`.
pub fn log_spectral_distance(a: &ComplexSpectrum, b: &ComplexSpectrum) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| (20.0 * ((p.norm() + LSD_DELTA).log10() - (q.norm() + LSD_DELTA).log10())).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_spectrum, seeded};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16000).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identical_and_scaled_hit_cap() {
        let r = wave(random(1000, 1));
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&r, &r.scaled(2.0).unwrap()).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_of_equal_power_is_zero_db() {
        let r = random(4096, 2);
        let mut n = random(4096, 3);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let k = r.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() / rr;
        n.iter_mut().zip(&r).for_each(|(b, a)| *b -= k * a);
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let g = (rr / nn).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = si_sdr(&wave(r), &wave(est)).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn si_sdr_errors() {
        let r = wave(random(10, 4));
        assert!(si_sdr(&r, &wave(random(11, 5))).is_err());
        assert!(matches!(si_sdr(&wave(vec![0.0; 10]), &r), Err(Error::ZeroPower(_))));
        assert!(matches!(si_sdr(&r, &wave(vec![0.0; 10])), Err(Error::ZeroPower(_))));
    }

    #[test]
    fn segmental_snr_known_value() {
        let r = wave(vec![1.0; 512]);
        let e = wave(vec![0.9; 512]);
        // 10·log10(1/0.01) = 20 dB in every frame.
        assert_relative_eq!(segmental_snr(&r, &e, 128).unwrap(), 20.0, epsilon = 1e-9);
        assert_eq!(segmental_snr(&r, &r, 128).unwrap(), 35.0);
        assert_eq!(segmental_snr(&r, &wave(vec![-5.0; 512]), 128).unwrap(), -10.0);
    }

    #[test]
    fn residual_noise_examples() {
        let mut rng = seeded(6);
        let x = complex_normal_spectrum(4, 5, &mut rng);
        assert_eq!(residual_noise_power(&x, &x).unwrap(), 0.0);
        let n = complex_normal_spectrum(4, 5, &mut rng);
        let v = x.lin_comb(1.0, &n, 0.3).unwrap();
        assert_relative_eq!(residual_noise_power(&v, &x).unwrap(), 0.09 * n.mean_power(), max_relative = 1e-12);
        assert!(residual_noise_power(&x, &ComplexSpectrum::zeros(5, 4)).is_err());
    }

    #[test]
    fn lsd_examples() {
        let mut rng = seeded(7);
        let a = complex_normal_spectrum(6, 9, &mut rng);
        assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);
        let b = a.scale(10.0);
        assert_relative_eq!(log_spectral_distance(&b, &a).unwrap(), 20.0, epsilon = 1e-6);
    }

    #[test]
    fn lsd_matches_brute_force() {
        let mut rng = seeded(8);
        let a = complex_normal_spectrum(7, 11, &mut rng);
        let b = complex_normal_spectrum(7, 11, &mut rng);
        let mut acc = 0.0;
        for l in 0..7 {
            for m in 0..11 {
                let pa: Complex64 = a.get(l, m);
                let pb: Complex64 = b.get(l, m);
                let da = (pa.re * pa.re + pa.im * pa.im).sqrt() + 1e-8;
                let db = (pb.re * pb.re + pb.im * pb.im).sqrt() + 1e-8;
                let d = 20.0 * (da / db).ln() / std::f64::consts::LN_10;
                acc += d * d;
            }
        }
        let oracle = (acc / 77.0).sqrt();
        assert!((log_spectral_distance(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn si_sdr_is_scale_invariant(seed in 0u64..1000, k in 1e-3f64..1e3) {
            let r = wave(random(256, seed));
            let e = wave(random(256, seed + 10_000));
            let base = si_sdr(&r, &e).unwrap();
            let scaled = si_sdr(&r, &e.scaled(k).unwrap()).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
