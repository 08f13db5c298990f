//! Small trainable score model.
//!
//! Each time-frequency bin is processed independently by the same MLP. The
//! input is a `(2r+1)×(2r+1)` neighbourhood (frames × bins, zero outside the
//! spectrum) of `[Re S, Im S, Re Y, Im Y]`, optionally followed by `|S|` and
//! `|Y|` per neighbour, plus a sinusoidal embedding of `τ`. The first layer
//! therefore acts as a 2-D convolution over the patch.
//!
//! The network emits two complex gains and forms a clean-spectrum estimate
//! `X̂ = κ_y·Y + κ_s·S`. The score is the conditional score evaluated at
//! that estimate, `Ψ = −(S − α(λX̂ + (1−λ)Y))/G²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::schedule::Schedule;
use crate::spectrum::ComplexSpectrum;

use super::ScoreFn;

const OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Neighbourhood radius in frames and bins.
    pub context: usize,
    pub hidden: Vec<usize>,
    /// Number of sinusoid pairs in the τ embedding.
    pub tau_features: usize,
    pub magnitude_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            context: 1,
            hidden: vec![32, 32],
            tau_features: 4,
            magnitude_features: true,
        }
    }
}

impl ModelConfig {
    fn per_bin(&self) -> usize {
        if self.magnitude_features {
            6
        } else {
            4
        }
    }

    pub fn input_len(&self) -> usize {
        let side = 2 * self.context + 1;
        side * side * self.per_bin() + 2 * self.tau_features
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_len()];
        sizes.extend(&self.hidden);
        sizes.push(OUTPUTS);
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Schedule terms needed to turn the clean estimate into a score.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TauTerms {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub g: f64,
}

impl TauTerms {
    pub fn new(schedule: &Schedule, tau: f64) -> Result<Self> {
        let g = schedule.sd(tau)?;
        if g <= 0.0 {
            return Err(Error::DegenerateDensity(tau));
        }
        Ok(Self {
            alpha: schedule.alpha(tau)?,
            lambda: schedule.lambda(tau)?,
            eta: schedule.eta(tau)?,
            g,
        })
    }

    /// `G·Ψ` for one bin given the clean estimate.
    pub fn weighted_score(&self, s: Complex64, y: Complex64, x_hat: Complex64) -> Complex64 {
        -(s - (x_hat * self.lambda + y * self.eta) * self.alpha) / self.g
    }

    /// `∂(G·Ψ)/∂X̂`, a real factor.
    pub fn weighted_score_slope(&self) -> f64 {
        self.alpha * self.lambda / self.g
    }
}

/// Per-bin multilayer perceptron over a spectral neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMlp {
    config: ModelConfig,
    schedule: Schedule,
    params: Vec<f64>,
}

/// Activations kept for the backward pass of one bin.
pub(crate) struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            acts: config.layer_sizes().iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn acts_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.acts
    }
}

impl PatchMlp {
    /// Uniform fan-in initialization for hidden layers; the output layer
    /// starts at `κ_y = 1, κ_s = 0`, i.e. `X̂ = Y`.
    pub fn new(config: ModelConfig, schedule: Schedule, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        let sizes = config.layer_sizes();
        let mut params = Vec::with_capacity(config.param_count());
        let last = sizes.len() - 2;
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if i == last {
                params.extend(std::iter::repeat(0.0).take(fan_in * fan_out));
                params.extend([1.0, 0.0, 0.0, 0.0]);
            } else {
                let bound = (1.0 / fan_in as f64).sqrt();
                params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
                params.extend(std::iter::repeat(0.0).take(fan_out));
            }
        }
        Ok(Self {
            config,
            schedule,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, schedule: Schedule, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::InvalidConfig(format!(
                "model expects {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            config,
            schedule,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn tau_embedding(&self, tau: f64) -> Vec<f64> {
        let t = tau / self.schedule.t_max;
        (0..self.config.tau_features)
            .flat_map(|i| {
                let w = PI * (1u64 << i) as f64 * t;
                [w.sin(), w.cos()]
            })
            .collect()
    }

    pub(crate) fn features(
        &self,
        s: &ComplexSpectrum,
        y: &ComplexSpectrum,
        frame: usize,
        bin: usize,
        tau_emb: &[f64],
        out: &mut [f64],
    ) {
        let r = self.config.context as isize;
        let per = self.config.per_bin();
        let mut k = 0;
        for dl in -r..=r {
            for dm in -r..=r {
                let l = frame as isize + dl;
                let m = bin as isize + dm;
                let inside =
                    l >= 0 && m >= 0 && (l as usize) < s.frames() && (m as usize) < s.bins();
                if inside {
                    let sv = s.get(l as usize, m as usize);
                    let yv = y.get(l as usize, m as usize);
                    out[k] = sv.re;
                    out[k + 1] = sv.im;
                    out[k + 2] = yv.re;
                    out[k + 3] = yv.im;
                    if per == 6 {
                        out[k + 4] = sv.norm();
                        out[k + 5] = yv.norm();
                    }
                } else {
                    out[k..k + per].fill(0.0);
                }
                k += per;
            }
        }
        out[k..].copy_from_slice(tau_emb);
    }

    /// Forward pass; the input must already be in `tape.acts[0]`.
    pub(crate) fn forward(&self, tape: &mut Tape) -> [f64; OUTPUTS] {
        let sizes = self.config.layer_sizes();
        let n_layers = sizes.len() - 1;
        let mut offset = 0;
        for layer in 0..n_layers {
            let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = tape.acts.split_at_mut(layer + 1);
            let input = &prev[layer];
            let output = &mut next[0];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + b[j];
                output[j] = if layer + 1 < n_layers { z.tanh() } else { z };
            }
            offset += n_in * n_out + n_out;
        }
        let out = &tape.acts[n_layers];
        [out[0], out[1], out[2], out[3]]
    }

    /// Accumulates `∂loss/∂params` given `∂loss/∂output` after a
    /// [`Self::forward`] on the same tape.
    pub(crate) fn backward(&self, tape: &Tape, d_out: [f64; OUTPUTS], grad: &mut [f64]) {
        let sizes = self.config.layer_sizes();
        let n_layers = sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for layer in 0..n_layers {
            offsets.push(offset);
            offset += sizes[layer] * sizes[layer + 1] + sizes[layer + 1];
        }
        let mut delta: Vec<f64> = d_out.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
            let off = offsets[layer];
            let input = &tape.acts[layer];
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                for (g, x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + j] += d;
            }
            if layer == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let d = delta[j];
                for (p, wv) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            // tanh' = 1 − a²
            for (p, a) in prev.iter_mut().zip(&tape.acts[layer]) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub(crate) fn clean_estimate(out: [f64; OUTPUTS], s: Complex64, y: Complex64) -> Complex64 {
        Complex64::new(out[0], out[1]) * y + Complex64::new(out[2], out[3]) * s
    }

    /// `∂loss/∂output` given `∂loss/∂X̂` as a real pair.
    pub(crate) fn output_grad(d_xhat: Complex64, s: Complex64, y: Complex64) -> [f64; OUTPUTS] {
        let (gr, gi) = (d_xhat.re, d_xhat.im);
        [
            gr * y.re + gi * y.im,
            -gr * y.im + gi * y.re,
            gr * s.re + gi * s.im,
            -gr * s.im + gi * s.re,
        ]
    }

    /// Weighted score `G·Ψ` for every bin.
    pub fn weighted_score(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum> {
        s.ensure_same_shape(y)?;
        let terms = TauTerms::new(&self.schedule, tau)?;
        let emb = self.tau_embedding(tau);
        let bins = s.bins();
        let rows: Vec<Vec<Complex64>> = (0..s.frames())
            .into_par_iter()
            .map(|l| {
                let mut tape = Tape::new(&self.config);
                (0..bins)
                    .map(|m| {
                        self.features(s, y, l, m, &emb, &mut tape.acts[0]);
                        let out = self.forward(&mut tape);
                        let (sv, yv) = (s.get(l, m), y.get(l, m));
                        terms.weighted_score(sv, yv, Self::clean_estimate(out, sv, yv))
                    })
                    .collect()
            })
            .collect();
        ComplexSpectrum::from_vec(s.frames(), bins, rows.concat())
    }
}

impl ScoreFn for PatchMlp {
    fn evaluate(&self, s: &ComplexSpectrum, y: &ComplexSpectrum, tau: f64) -> Result<ComplexSpectrum> {
        let g = self.schedule.sd(tau)?;
        Ok(self.weighted_score(s, y, tau)?.scale(1.0 / g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_spectrum, seeded};

    #[test]
    fn default_model_is_small() {
        let cfg = ModelConfig::default();
        assert!(cfg.param_count() < 100_000);
        let m = PatchMlp::new(cfg.clone(), Schedule::default(), &mut seeded(0)).unwrap();
        assert_eq!(m.params().len(), cfg.param_count());
    }

    #[test]
    fn initial_model_predicts_noisy_as_clean() {
        let s = Schedule::default();
        let m = PatchMlp::new(ModelConfig::default(), s, &mut seeded(0)).unwrap();
        let mut rng = seeded(1);
        let st = complex_normal_spectrum(3, 5, &mut rng);
        let y = complex_normal_spectrum(3, 5, &mut rng);
        let tau = 0.3;
        let out = m.evaluate(&st, &y, tau).unwrap();
        // X̂ = Y makes U = α·Y.
        let a = s.alpha(tau).unwrap();
        let g2 = s.sd(tau).unwrap().powi(2);
        let expect = st.zip_map(&y, |sv, yv| -(sv - yv * a) / g2).unwrap();
        assert!(out.distance_sqr(&expect).unwrap().sqrt() < 1e-12);
        assert_eq!(out.shape(), st.shape());
    }

    #[test]
    fn rejects_wrong_parameter_count() {
        let err = PatchMlp::from_params(ModelConfig::default(), Schedule::default(), vec![0.0; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn tau_zero_is_degenerate() {
        let m = PatchMlp::new(ModelConfig::default(), Schedule::default(), &mut seeded(0)).unwrap();
        let z = ComplexSpectrum::zeros(2, 2);
        assert!(m.evaluate(&z, &z, 0.0).is_err());
    }
}
