use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spectrum::ComplexSpectrum;

/// Random stream used throughout the crate. Independent streams for
/// parallel work come from [`split`], which does not depend on the thread
/// count.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream `stream` of the generator seeded with `seed`.
pub fn split(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Circular-symmetric complex normal with `E|z|² = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_spectrum<R: Rng + ?Sized>(
    frames: usize,
    bins: usize,
    rng: &mut R,
) -> ComplexSpectrum {
    let data = (0..frames * bins).map(|_| complex_normal(rng)).collect();
    ComplexSpectrum::from_vec(frames, bins, data).expect("shape is consistent")
}
