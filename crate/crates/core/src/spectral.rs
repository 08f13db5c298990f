//! Time↔frequency conversion in the magnitude-compressed STFT domain.
//!
//! Every spectrum handled by the diffusion code lives in the compressed
//! domain `a·|STFT|^c·e^{j∠STFT}`. [`analyze`] applies the compression after
//! the STFT and [`synthesize`] undoes it before the inverse STFT.
//!
//! The STFT is unnormalized (plain DFT sums over windowed frames). Frames
//! are centred: the signal is zero-padded by `window_len/2` on both sides
//! and frame `l` covers padded samples `[l·hop, l·hop + window_len)`, so
//! frame `l` is centred on original sample `l·hop`. Synthesis is weighted
//! overlap-add with the Hann window divided by the per-sample sum of
//! squared windows, which inverts the analysis exactly wherever that sum is
//! nonzero.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::ComplexSpectrum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Truncates or zero-extends to exactly `len` samples.
    pub fn with_len(&self, len: usize) -> Result<Self> {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * k).collect(), self.sample_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    /// Pad with zero frames or keep only the leading frames so the
    /// spectrum has exactly this many frames.
    pub fixed_frames: Option<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 510,
            hop: 128,
            fft_size: 510,
            fixed_frames: None,
        }
    }
}

impl StftConfig {
    /// The default layout in fixed-length mode, L = M = 256.
    pub fn fixed_length() -> Self {
        Self {
            fixed_frames: Some(256),
            ..Self::default()
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 {
            return Err(Error::InvalidConfig(
                "window length and hop must be positive".into(),
            ));
        }
        if self.hop > self.window_len {
            return Err(Error::InvalidConfig(format!(
                "hop {} exceeds window length {}",
                self.hop, self.window_len
            )));
        }
        if self.fft_size < self.window_len {
            return Err(Error::InvalidConfig(format!(
                "fft size {} is shorter than the window {}",
                self.fft_size, self.window_len
            )));
        }
        if self.fixed_frames == Some(0) {
            return Err(Error::InvalidConfig("fixed frame count must be positive".into()));
        }
        Ok(())
    }

    /// Zero padding added before the first sample and after the last.
    pub fn pad(&self) -> usize {
        self.window_len / 2
    }

    /// Number of frames the analysis produces for `len` samples, before any
    /// fixed-length adjustment.
    pub fn natural_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded <= self.window_len {
            1
        } else {
            1 + (padded - self.window_len).div_ceil(self.hop)
        }
    }

    /// Length of the synthesized waveform for `frames` frames: the
    /// overlap-add span with the padding removed.
    pub fn output_len(&self, frames: usize) -> usize {
        ((frames - 1) * self.hop + self.window_len - 2 * self.pad()).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub a: f64,
    pub c: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { a: 0.15, c: 0.5 }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.a) || !ok(self.c) {
            return Err(Error::InvalidConfig(format!(
                "compression constants must lie in (0, 1], got a = {}, c = {}",
                self.a, self.c
            )));
        }
        Ok(())
    }

    /// `a·|v|^c·e^{j∠v}`.
    pub fn compress(&self, v: Complex64) -> Complex64 {
        let mag = v.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        v * (self.a * mag.powf(self.c) / mag)
    }

    /// `(|v|/a)^{1/c}·e^{j∠v}`.
    pub fn decompress(&self, v: Complex64) -> Complex64 {
        let mag = v.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        v * ((mag / self.a).powf(1.0 / self.c) / mag)
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Planned forward/inverse transforms for one STFT layout.
pub struct SpectralTransform {
    stft: StftConfig,
    compression: CompressionConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralTransform {
    pub fn new(stft: StftConfig, compression: CompressionConfig) -> Result<Self> {
        stft.validate()?;
        compression.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: hann_window(stft.window_len),
            forward: planner.plan_fft_forward(stft.fft_size),
            inverse: planner.plan_fft_inverse(stft.fft_size),
            stft,
            compression,
        })
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn compression(&self) -> &CompressionConfig {
        &self.compression
    }

    /// Uncompressed STFT.
    pub fn stft(&self, w: &Waveform) -> Result<ComplexSpectrum> {
        let x = w.samples();
        let n_fft = self.stft.fft_size;
        let bins = self.stft.bins();
        let natural = self.stft.natural_frames(x.len());
        let frames = self.stft.fixed_frames.unwrap_or(natural);
        let mut out = ComplexSpectrum::zeros(frames, bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let pad = self.stft.pad();
        for l in 0..frames.min(natural) {
            let start = l * self.stft.hop;
            buf.fill(Complex64::new(0.0, 0.0));
            for (n, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                let Some(i) = (start + n).checked_sub(pad) else {
                    continue;
                };
                if let Some(&s) = x.get(i) {
                    *b = Complex64::new(s * w, 0.0);
                }
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            let row = &mut out.as_mut_slice()[l * bins..(l + 1) * bins];
            row.copy_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse of [`Self::stft`].
    pub fn istft(&self, spec: &ComplexSpectrum, sample_rate: u32) -> Result<Waveform> {
        let n_fft = self.stft.fft_size;
        let bins = self.stft.bins();
        if spec.bins() != bins {
            return Err(Error::ShapeMismatch {
                expected: (spec.frames(), bins),
                got: spec.shape(),
            });
        }
        let frames = spec.frames();
        let len = (frames - 1) * self.stft.hop + self.stft.window_len;
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for l in 0..frames {
            let row = spec.frame(l);
            buf[..bins].copy_from_slice(row);
            for k in bins..n_fft {
                buf[k] = buf[n_fft - k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = l * self.stft.hop;
            for (n, w) in self.window.iter().enumerate() {
                acc[start + n] += buf[n].re / n_fft as f64 * w;
                norm[start + n] += w * w;
            }
        }
        let floor = 1e-10;
        let pad = self.stft.pad();
        let samples = acc
            .iter()
            .zip(&norm)
            .skip(pad)
            .take(self.stft.output_len(frames))
            .map(|(&a, &n)| if n > floor { a / n } else { 0.0 })
            .collect();
        Waveform::new(samples, sample_rate)
    }

    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpectrum> {
        let c = self.compression;
        Ok(self.stft(w)?.map(|v| c.compress(v)))
    }

    /// Inverse of [`Self::analyze`]; the output covers the full overlap-add
    /// span, use [`Waveform::with_len`] to align it to a reference.
    pub fn synthesize(&self, s: &ComplexSpectrum, sample_rate: u32) -> Result<Waveform> {
        if !s.is_finite() {
            return Err(Error::NonFinite("spectrum"));
        }
        let c = self.compression;
        self.istft(&s.map(|v| c.decompress(v)), sample_rate)
    }
}

pub fn analyze(
    w: &Waveform,
    stft: &StftConfig,
    compression: &CompressionConfig,
) -> Result<ComplexSpectrum> {
    SpectralTransform::new(*stft, *compression)?.analyze(w)
}

pub fn synthesize(
    s: &ComplexSpectrum,
    stft: &StftConfig,
    compression: &CompressionConfig,
    sample_rate: u32,
) -> Result<Waveform> {
    SpectralTransform::new(*stft, *compression)?.synthesize(s, sample_rate)
}

/// Gain applied to `noise` so that the clean-to-scaled-noise power ratio is
/// `snr_db`. The noise is looped or trimmed to the clean length first.
pub fn noise_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("snr must be finite, got {snr_db}")));
    }
    let p_clean = clean.power();
    let p_noise = fit_noise(noise, clean.len()).iter().map(|s| s * s).sum::<f64>()
        / clean.len() as f64;
    if p_clean == 0.0 {
        return Err(Error::ZeroPower("clean signal"));
    }
    if p_noise == 0.0 {
        return Err(Error::ZeroPower("noise signal"));
    }
    Ok((p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

fn fit_noise(noise: &Waveform, len: usize) -> Vec<f64> {
    noise.samples().iter().copied().cycle().take(len).collect()
}

/// `clean + k·noise` at the requested SNR.
pub fn mix_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    let k = noise_gain(clean, noise, snr_db)?;
    let samples = clean
        .samples()
        .iter()
        .zip(fit_noise(noise, clean.len()))
        .map(|(c, n)| c + k * n)
        .collect();
    Waveform::new(samples, clean.sample_rate())
}
