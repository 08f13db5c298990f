//! Synthetic paired clean/noisy corpora and WAV ingestion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{split, SimRng};
use crate::spectral::{mix_snr, Waveform};
use crate::wav::{read_wav, write_wav, DEFAULT_SAMPLE_RATE};

const PEAK_LIMIT: f64 = 0.99;
const MIN_SAMPLES: usize = 510;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanKind {
    Multisine,
    Chirp,
    FilteredNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    BabbleProxy,
}

macro_rules! kind_from_str {
    ($ty:ty, $($name:literal => $v:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.replace('-', "_").as_str() {
                    $($name => Ok($v),)+
                    other => Err(Error::InvalidConfig(format!("unknown kind '{other}'"))),
                }
            }
        }
    };
}

kind_from_str!(CleanKind, "multisine" => CleanKind::Multisine, "chirp" => CleanKind::Chirp, "filtered_noise" => CleanKind::FilteredNoise);
kind_from_str!(NoiseKind, "white" => NoiseKind::White, "pink" => NoiseKind::Pink, "babble_proxy" => NoiseKind::BabbleProxy);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_utterances: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub snr_levels_db: Vec<f64>,
    pub clean_kind: CleanKind,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_utterances: 20,
            duration_s: 2.048,
            sample_rate: DEFAULT_SAMPLE_RATE,
            snr_levels_db: vec![-5.0, 0.0, 5.0],
            clean_kind: CleanKind::Multisine,
            noise_kind: NoiseKind::White,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid duration {}", self.duration_s)));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if self.samples() < MIN_SAMPLES {
            return Err(Error::InvalidConfig(format!(
                "duration {} s gives {} samples, fewer than one analysis window",
                self.duration_s,
                self.samples()
            )));
        }
        if self.n_utterances > 0 && self.snr_levels_db.is_empty() {
            return Err(Error::InvalidConfig("no SNR levels given".into()));
        }
        if self.snr_levels_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR levels must be finite".into()));
        }
        Ok(())
    }

    /// SNR used for utterance `i`: levels are cycled in order.
    pub fn snr_for(&self, i: usize) -> f64 {
        self.snr_levels_db[i % self.snr_levels_db.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    pub index: usize,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub snr_db: f64,
}

/// Generates the corpus. Utterance `i` draws from stream `i` of the seed,
/// so the result does not depend on the thread count.
pub fn generate(spec: &CorpusSpec) -> Result<Vec<CorpusPair>> {
    spec.validate()?;
    (0..spec.n_utterances)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

fn generate_one(spec: &CorpusSpec, i: usize) -> Result<CorpusPair> {
    let mut rng = split(spec.seed, i as u64);
    let n = spec.samples();
    let sr = spec.sample_rate as f64;
    let mut clean = match spec.clean_kind {
        CleanKind::Multisine => multisine(n, sr, &mut rng),
        CleanKind::Chirp => chirp(n, sr, &mut rng),
        CleanKind::FilteredNoise => filtered_noise(n, sr, &mut rng),
    };
    let peak = rng.gen_range(0.5..0.9);
    normalize_peak(&mut clean, peak);
    let noise = match spec.noise_kind {
        NoiseKind::White => white(n, &mut rng),
        NoiseKind::Pink => pink(n, &mut rng),
        NoiseKind::BabbleProxy => babble_proxy(n, sr, &mut rng),
    };
    let snr_db = spec.snr_for(i);
    let clean = Waveform::new(clean, spec.sample_rate)?;
    let noise = Waveform::new(noise, spec.sample_rate)?;
    let mut noisy = mix_snr(&clean, &noise, snr_db)?;
    let mut clean = clean;
    // One common gain keeps the SNR exact.
    let p = noisy.peak().max(clean.peak());
    if p >= PEAK_LIMIT {
        let k = 0.95 / p;
        clean = clean.scaled(k)?;
        noisy = noisy.scaled(k)?;
    }
    Ok(CorpusPair {
        index: i,
        clean,
        noisy,
        snr_db,
    })
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Slow syllable-like envelope with raised-cosine fades at both ends.
fn envelope(n: usize, sr: f64, rng: &mut SimRng) -> Vec<f64> {
    let rate = rng.gen_range(2.0..5.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let depth = rng.gen_range(0.3..0.7);
    let fade = (0.02 * sr) as usize;
    (0..n)
        .map(|t| {
            let am = 1.0 - depth * 0.5 * (1.0 + (2.0 * PI * rate * t as f64 / sr + phase).cos());
            let edge = t.min(n - 1 - t);
            let f = if edge < fade {
                0.5 * (1.0 - (PI * edge as f64 / fade as f64).cos())
            } else {
                1.0
            };
            am * f
        })
        .collect()
}

fn multisine(n: usize, sr: f64, rng: &mut SimRng) -> Vec<f64> {
    let f0 = rng.gen_range(110.0..260.0);
    let harmonics = rng.gen_range(4..9);
    let vib_rate = rng.gen_range(3.0..6.0);
    let vib_depth = rng.gen_range(0.0..0.03);
    let parts: Vec<(f64, f64, f64)> = (1..=harmonics)
        .map(|h| (h as f64, rng.gen_range(0.3..1.0) / h as f64, rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let env = envelope(n, sr, rng);
    let mut phase = 0.0;
    (0..n)
        .map(|t| {
            let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t as f64 / sr).sin());
            phase += 2.0 * PI * f / sr;
            env[t] * parts.iter().map(|(h, a, p)| a * (h * phase + p).sin()).sum::<f64>()
        })
        .collect()
}

fn chirp(n: usize, sr: f64, rng: &mut SimRng) -> Vec<f64> {
    let f_start: f64 = rng.gen_range(150.0..600.0);
    let f_end = rng.gen_range(600.0..2500.0);
    let dur = n as f64 / sr;
    let env = envelope(n, sr, rng);
    let mut phase = 0.0;
    (0..n)
        .map(|t| {
            let f = f_start * (f_end / f_start).powf(t as f64 / sr / dur);
            phase += 2.0 * PI * f / sr;
            env[t] * (phase.sin() + 0.4 * (2.0 * phase).sin())
        })
        .collect()
}

/// Two-pole resonator driven by `input`.
fn resonate(input: &[f64], centre: f64, bandwidth: f64, sr: f64) -> Vec<f64> {
    let r = (-PI * bandwidth / sr).exp();
    let a1 = 2.0 * r * (2.0 * PI * centre / sr).cos();
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0, 0.0);
    input
        .iter()
        .map(|&x| {
            let y = (1.0 - r) * x + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn filtered_noise(n: usize, sr: f64, rng: &mut SimRng) -> Vec<f64> {
    let centre = rng.gen_range(300.0..3000.0);
    let bw = rng.gen_range(80.0..300.0);
    let src = white(n, rng);
    let env = envelope(n, sr, rng);
    resonate(&src, centre, bw, sr)
        .into_iter()
        .zip(env)
        .map(|(v, e)| v * e)
        .collect()
}

fn white(n: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Kellet's economy pink filter over white noise.
fn pink(n: usize, rng: &mut SimRng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white(n, rng)
        .into_iter()
        .map(|w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Sum of amplitude-modulated narrowband noises.
fn babble_proxy(n: usize, sr: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let centre = rng.gen_range(200.0..3500.0);
        let band = resonate(&white(n, rng), centre, 120.0, sr);
        let rate = rng.gen_range(2.0..8.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (t, (o, b)) in out.iter_mut().zip(band).enumerate() {
            *o += b * 0.5 * (1.0 + (2.0 * PI * rate * t as f64 / sr + phase).sin());
        }
    }
    out
}

/// Reads a clean/noisy pair and trims both to the shorter length.
pub fn load_pair(clean_path: impl AsRef<Path>, noisy_path: impl AsRef<Path>) -> Result<(Waveform, Waveform)> {
    let clean = read_wav(clean_path)?;
    let noisy = read_wav(noisy_path)?;
    if clean.sample_rate() != noisy.sample_rate() {
        return Err(Error::RateMismatch(clean.sample_rate(), noisy.sample_rate()));
    }
    let n = clean.len().min(noisy.len());
    Ok((clean.with_len(n)?, noisy.with_len(n)?))
}

/// One manifest line. Paths are relative to the manifest's directory unless
/// absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub snr_db: f64,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Writes `clean_NNN.wav`, `noisy_NNN.wav` and `manifest.jsonl` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, pairs: &[CorpusPair], seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let entries: Vec<ManifestEntry> = pairs
        .iter()
        .map(|p| ManifestEntry {
            index: p.index,
            clean: PathBuf::from(format!("clean_{:03}.wav", p.index)),
            noisy: PathBuf::from(format!("noisy_{:03}.wav", p.index)),
            snr_db: p.snr_db,
            seed,
        })
        .collect();
    for (p, e) in pairs.iter().zip(&entries) {
        write_wav(dir.join(&e.clean), &p.clean)?;
        write_wav(dir.join(&e.noisy), &p.noisy)?;
    }
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&path, &entries)?;
    Ok(path)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(&line)?;
        if e.clean.is_relative() {
            e.clean = base.join(&e.clean);
        }
        if e.noisy.is_relative() {
            e.noisy = base.join(&e.noisy);
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::si_sdr;

    fn small(n: usize) -> CorpusSpec {
        CorpusSpec {
            n_utterances: n,
            duration_s: 0.5,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn requested_snr_is_exact() {
        for noise_kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::BabbleProxy] {
            let spec = CorpusSpec { noise_kind, ..small(6) };
            for p in generate(&spec).unwrap() {
                let noise: Vec<f64> = p.noisy.samples().iter().zip(p.clean.samples()).map(|(a, b)| a - b).collect();
                let pn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
                let measured = 10.0 * (p.clean.power() / pn).log10();
                assert!((measured - p.snr_db).abs() < 1e-9, "{measured} vs {}", p.snr_db);
            }
        }
    }

    #[test]
    fn white_noise_zero_db_si_sdr() {
        let spec = CorpusSpec {
            snr_levels_db: vec![0.0],
            ..small(8)
        };
        for p in generate(&spec).unwrap() {
            let v = si_sdr(&p.clean, &p.noisy).unwrap();
            assert!(v.abs() < 0.5, "{v}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for clean_kind in [CleanKind::Multisine, CleanKind::Chirp, CleanKind::FilteredNoise] {
            let spec = CorpusSpec { clean_kind, ..small(4) };
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
        let other = CorpusSpec { seed: 1, ..small(4) };
        assert_ne!(generate(&other).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn empty_and_invalid_specs() {
        assert!(generate(&small(0)).unwrap().is_empty());
        assert!(generate(&CorpusSpec { duration_s: 0.0, ..small(1) }).is_err());
        assert!(generate(&CorpusSpec { duration_s: 0.01, ..small(1) }).is_err());
        assert!(generate(&CorpusSpec { snr_levels_db: vec![], ..small(1) }).is_err());
    }

    #[test]
    fn audio_is_finite_and_below_peak_limit() {
        for noise_kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::BabbleProxy] {
            let spec = CorpusSpec {
                noise_kind,
                snr_levels_db: vec![-5.0],
                ..small(5)
            };
            for p in generate(&spec).unwrap() {
                for w in [&p.clean, &p.noisy] {
                    assert!(w.samples().iter().all(|v| v.is_finite()));
                    assert!(w.peak() < PEAK_LIMIT);
                }
                assert_eq!(p.clean.len(), 8000);
            }
        }
    }

    #[test]
    fn snr_levels_cycle() {
        let pairs = generate(&small(5)).unwrap();
        let snrs: Vec<f64> = pairs.iter().map(|p| p.snr_db).collect();
        assert_eq!(snrs, vec![-5.0, 0.0, 5.0, -5.0, 0.0]);
    }

    #[test]
    fn manifest_round_trip_and_load_pair() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate(&small(3)).unwrap();
        let manifest = write_corpus(dir.path(), &pairs, 0).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 3);
        for (e, p) in entries.iter().zip(&pairs) {
            let (c, n) = load_pair(&e.clean, &e.noisy).unwrap();
            assert_eq!(e.snr_db, p.snr_db);
            for (a, b) in c.samples().iter().zip(p.clean.samples()) {
                assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-12);
            }
            assert_eq!(n.len(), p.noisy.len());
        }
    }

    #[test]
    fn load_pair_trims_and_checks_rate() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        let c = dir.path().join("c.wav");
        write_wav(&a, &Waveform::new(vec![0.1; 100], 16000).unwrap()).unwrap();
        write_wav(&b, &Waveform::new(vec![0.2; 80], 16000).unwrap()).unwrap();
        write_wav(&c, &Waveform::new(vec![0.2; 80], 8000).unwrap()).unwrap();
        let (x, y) = load_pair(&a, &b).unwrap();
        assert_eq!((x.len(), y.len()), (80, 80));
        assert!(matches!(load_pair(&c, &a), Err(Error::RateMismatch(8000, 16000))));
    }
}
