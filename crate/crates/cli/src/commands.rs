use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use vpidm::corpus::{generate, load_pair, read_manifest, write_corpus, CorpusPair};
use vpidm::metrics::{log_spectral_distance, segmental_snr, si_sdr};
use vpidm::sampler::{
    diagnostics_observer, early_stop_spectrum, enhance_spectrum, SamplerConfig, SamplerMode, StepDiagnostic,
};
use vpidm::score::{moving_average, train_small_model, Checkpoint, PatchMlp, ScoreFn, TrainingPair};
use vpidm::wav::{read_wav, write_wav};
use vpidm::{OracleScore, Schedule, SpectralTransform, Waveform};

use crate::config::{apply, ExperimentConfig};
use crate::verify::{run_checks, VerifyOptions};
use crate::{CliError, Command, CommonArgs, ScoreKind};

pub const MANIFEST_EXT: &str = "jsonl";
pub const CHECKPOINT_NAME: &str = "checkpoint.json";
pub const LOSS_TRACE_NAME: &str = "loss_trace.csv";
pub const METRICS_NAME: &str = "metrics.csv";
pub const SWEEP_NAME: &str = "sweep.csv";
pub const VERIFY_NAME: &str = "verify_report.csv";
const LOSS_WINDOW: usize = 50;
const SEGSNR_FRAME: usize = 256;

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate {
            common,
            out,
            n,
            duration,
            snr,
            clean_kind,
            noise_kind,
        } => {
            let mut cfg = resolve(&common)?;
            let c = &mut cfg.corpus;
            apply(&mut c.n_utterances, n, "corpus.n_utterances");
            apply(&mut c.duration_s, duration, "corpus.duration_s");
            apply(&mut c.snr_levels_db, snr, "corpus.snr_levels_db");
            apply(&mut c.clean_kind, clean_kind, "corpus.clean_kind");
            apply(&mut c.noise_kind, noise_kind, "corpus.noise_kind");
            cmd_generate(&cfg, &out)
        }
        Command::Train {
            common,
            manifest,
            out,
            steps,
            lr,
            batch_size,
        } => {
            let mut cfg = resolve(&common)?;
            apply(&mut cfg.train.steps, steps, "train.steps");
            apply(&mut cfg.train.learning_rate, lr, "train.learning_rate");
            apply(&mut cfg.train.batch_size, batch_size, "train.batch_size");
            cmd_train(&cfg, manifest.as_deref(), &out)
        }
        Command::Enhance {
            common,
            input,
            clean,
            score,
            checkpoint,
            mode,
            k,
            k1,
            diagnostics,
            out,
        } => {
            let mut cfg = resolve(&common)?;
            apply(&mut cfg.sampler.mode, mode.map(Into::into), "sampler.mode");
            apply(&mut cfg.sampler.k, k, "sampler.k");
            apply(&mut cfg.sampler.k1, k1, "sampler.k1");
            cfg.validate()?;
            let inputs = collect_inputs(&input, clean.as_deref())?;
            let source = ScoreSource::new(score, checkpoint.as_deref(), &cfg.schedule)?;
            cmd_enhance(&cfg, &inputs, &source, diagnostics, &out).map(|_| ())
        }
        Command::SweepSteps {
            common,
            manifest,
            k_list,
            score,
            checkpoint,
            out,
        } => {
            let cfg = resolve(&common)?;
            let source = ScoreSource::new(score, checkpoint.as_deref(), &cfg.schedule)?;
            cmd_sweep_steps(&cfg, manifest.as_deref(), &k_list, &source, &out).map(|_| ())
        }
        Command::Verify {
            common,
            perturb_g,
            paths,
            steps,
            out,
        } => {
            let cfg = resolve(&common)?;
            let opts = VerifyOptions {
                variant: cfg.schedule.variant,
                perturb_g,
                paths,
                steps,
                seed: common.seed.unwrap_or(0),
            };
            cmd_verify(&cfg, &opts, &out)
        }
    }
}

/// Loads the config file and applies the shared flags.
pub fn resolve(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(v) = common.variant {
        if v != cfg.schedule.variant {
            eprintln!("override: schedule.variant = {v} (config had {})", cfg.schedule.variant);
        }
        cfg.schedule = cfg.schedule.with_variant(v);
    }
    if let Some(seed) = common.seed {
        apply(&mut cfg.sampler.seed, Some(seed), "sampler.seed");
        apply(&mut cfg.train.seed, Some(seed), "train.seed");
        apply(&mut cfg.corpus.seed, Some(seed), "corpus.seed");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn transform(cfg: &ExperimentConfig) -> Result<SpectralTransform, CliError> {
    Ok(SpectralTransform::new(cfg.stft, cfg.compression)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let pairs = generate(&cfg.corpus)?;
    let manifest = write_corpus(out, &pairs, cfg.corpus.seed)?;
    cfg.record(out)?;
    eprintln!("wrote {} pairs, manifest {}", pairs.len(), manifest.display());
    Ok(())
}

/// Training corpus from a manifest, or generated from the `[corpus]` section.
fn load_corpus(cfg: &ExperimentConfig, manifest: Option<&Path>) -> Result<Vec<Input>, CliError> {
    match manifest {
        Some(p) => collect_inputs(p, None),
        None => Ok(generate(&cfg.corpus)?.into_iter().map(Input::from_pair).collect()),
    }
}

#[derive(Debug, Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
    moving_average: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, manifest: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let tr = transform(cfg)?;
    let inputs = load_corpus(cfg, manifest)?;
    let pairs = inputs
        .par_iter()
        .map(|i| {
            let clean = i
                .clean
                .as_ref()
                .ok_or_else(|| CliError::Usage(format!("{} has no clean reference", i.name)))?;
            Ok(TrainingPair {
                x: tr.analyze(clean)?,
                y: tr.analyze(&i.noisy)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let outcome = train_small_model(&pairs, &cfg.train, &cfg.schedule)?;
    std::fs::create_dir_all(out)?;
    cfg.record(out)?;
    Checkpoint::from_model(&outcome.model, cfg.train.seed).save(out.join(CHECKPOINT_NAME))?;
    let ma = moving_average(&outcome.loss_trace, LOSS_WINDOW);
    let rows: Vec<LossRow> = outcome
        .loss_trace
        .iter()
        .zip(&ma)
        .enumerate()
        .map(|(step, (&loss, &moving_average))| LossRow {
            step,
            loss,
            moving_average,
        })
        .collect();
    write_csv(&out.join(LOSS_TRACE_NAME), &rows)?;
    eprintln!(
        "trained {} steps: loss {:.4} -> {:.4} (moving average)",
        rows.len(),
        ma.first().copied().unwrap_or(f64::NAN),
        ma.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// One noisy input with an optional clean reference.
#[derive(Debug, Clone)]
pub struct Input {
    pub index: usize,
    pub name: String,
    pub noisy: Waveform,
    pub clean: Option<Waveform>,
    pub snr_db: Option<f64>,
}

impl Input {
    fn from_pair(p: CorpusPair) -> Self {
        Self {
            index: p.index,
            name: format!("{:03}", p.index),
            noisy: p.noisy,
            clean: Some(p.clean),
            snr_db: Some(p.snr_db),
        }
    }
}

pub fn collect_inputs(input: &Path, clean: Option<&Path>) -> Result<Vec<Input>, CliError> {
    for p in std::iter::once(input).chain(clean) {
        if !p.exists() {
            return Err(CliError::Io(format!("{} does not exist", p.display())));
        }
    }
    if input.extension().and_then(|e| e.to_str()) == Some(MANIFEST_EXT) {
        if clean.is_some() {
            return Err(CliError::Usage("--clean only applies to a single WAV input".into()));
        }
        read_manifest(input)?
            .into_iter()
            .map(|e| {
                let (c, n) = load_pair(&e.clean, &e.noisy)?;
                Ok(Input {
                    index: e.index,
                    name: format!("{:03}", e.index),
                    noisy: n,
                    clean: Some(c),
                    snr_db: Some(e.snr_db),
                })
            })
            .collect()
    } else {
        let (noisy, clean) = match clean {
            Some(c) => {
                let (c, n) = load_pair(c, input)?;
                (n, Some(c))
            }
            None => (read_wav(input)?, None),
        };
        let name = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        Ok(vec![Input {
            index: 0,
            name,
            noisy,
            clean,
            snr_db: None,
        }])
    }
}

/// Where scores come from.
pub enum ScoreSource {
    Oracle,
    Model(PatchMlp),
}

impl ScoreSource {
    pub fn new(kind: ScoreKind, checkpoint: Option<&Path>, schedule: &Schedule) -> Result<Self, CliError> {
        match (kind, checkpoint) {
            (ScoreKind::Oracle, None) => Ok(Self::Oracle),
            (ScoreKind::Oracle, Some(_)) => Err(CliError::Usage("--checkpoint needs --score checkpoint".into())),
            (ScoreKind::Checkpoint, None) => Err(CliError::Usage("--score checkpoint needs --checkpoint".into())),
            (ScoreKind::Checkpoint, Some(p)) => {
                if !p.exists() {
                    return Err(CliError::Io(format!("missing checkpoint {}", p.display())));
                }
                Ok(Self::Model(Checkpoint::load(p, schedule)?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub file: String,
    pub snr_db: Option<f64>,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdr_improvement: f64,
    pub lsd_in: f64,
    pub lsd_out: f64,
    pub segsnr_in: f64,
    pub segsnr_out: f64,
}

#[derive(Debug, Serialize)]
struct DiagnosticRow {
    k: usize,
    tau: f64,
    residual_noise: Option<f64>,
    state_norm: f64,
}

impl From<&StepDiagnostic> for DiagnosticRow {
    fn from(d: &StepDiagnostic) -> Self {
        Self {
            k: d.k,
            tau: d.tau,
            residual_noise: d.residual_noise,
            state_norm: d.state_norm,
        }
    }
}

pub struct EnhanceResult {
    pub output: Waveform,
    pub metrics: Option<MetricsRow>,
    pub diagnostics: Vec<StepDiagnostic>,
}

/// Per-file sampler seed: the configured seed offset by the file index.
pub fn file_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

pub fn enhance_input(
    cfg: &ExperimentConfig,
    sampler: &SamplerConfig,
    input: &Input,
    source: &ScoreSource,
    want_diagnostics: bool,
) -> Result<EnhanceResult, CliError> {
    let tr = transform(cfg)?;
    let y = tr.analyze(&input.noisy)?;
    let x = input.clean.as_ref().map(|c| tr.analyze(c)).transpose()?;
    let oracle;
    let psi: &dyn ScoreFn = match source {
        ScoreSource::Oracle => {
            let x = x
                .clone()
                .ok_or_else(|| CliError::Usage(format!("oracle score needs a clean reference for {}", input.name)))?;
            oracle = OracleScore::new(x, cfg.schedule);
            &oracle
        }
        ScoreSource::Model(m) => m,
    };
    let sampler = SamplerConfig {
        seed: file_seed(sampler.seed, input.index),
        ..*sampler
    };
    let mut diagnostics = Vec::new();
    let spec = {
        let mut observer = diagnostics_observer(&y, psi, &cfg.schedule, x.as_ref(), &mut diagnostics);
        let obs: Option<&mut dyn FnMut(usize, &vpidm::diffusion::DiffusionState) -> vpidm::Result<()>> =
            if want_diagnostics { Some(&mut observer) } else { None };
        match sampler.mode {
            SamplerMode::Full => enhance_spectrum(&y, psi, &cfg.schedule, &sampler, obs)?,
            SamplerMode::EarlyStop => early_stop_spectrum(&y, psi, &cfg.schedule, &sampler, obs)?,
        }
    };
    let output = tr
        .synthesize(&spec, input.noisy.sample_rate())?
        .with_len(input.noisy.len())?;
    let metrics = match &input.clean {
        Some(clean) => Some(file_metrics(&tr, &input.name, input.snr_db, clean, &input.noisy, &output)?),
        None => None,
    };
    Ok(EnhanceResult {
        output,
        metrics,
        diagnostics,
    })
}

pub fn file_metrics(
    tr: &SpectralTransform,
    name: &str,
    snr_db: Option<f64>,
    clean: &Waveform,
    noisy: &Waveform,
    output: &Waveform,
) -> Result<MetricsRow, CliError> {
    let raw_clean = tr.stft(clean)?;
    let si_in = si_sdr(clean, noisy)?;
    let si_out = si_sdr(clean, output)?;
    Ok(MetricsRow {
        file: name.to_string(),
        snr_db,
        si_sdr_in: si_in,
        si_sdr_out: si_out,
        si_sdr_improvement: si_out - si_in,
        lsd_in: log_spectral_distance(&tr.stft(noisy)?, &raw_clean)?,
        lsd_out: log_spectral_distance(&tr.stft(output)?, &raw_clean)?,
        segsnr_in: segmental_snr(clean, noisy, SEGSNR_FRAME)?,
        segsnr_out: segmental_snr(clean, output, SEGSNR_FRAME)?,
    })
}

pub fn cmd_enhance(
    cfg: &ExperimentConfig,
    inputs: &[Input],
    source: &ScoreSource,
    diagnostics: bool,
    out: &Path,
) -> Result<Vec<MetricsRow>, CliError> {
    std::fs::create_dir_all(out)?;
    cfg.record(out)?;
    let results = inputs
        .par_iter()
        .map(|i| enhance_input(cfg, &cfg.sampler, i, source, diagnostics))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut rows = Vec::new();
    for (input, r) in inputs.iter().zip(&results) {
        write_wav(out.join(format!("enhanced_{}.wav", input.name)), &r.output)?;
        if diagnostics {
            let d: Vec<DiagnosticRow> = r.diagnostics.iter().map(Into::into).collect();
            write_csv(&out.join(format!("diagnostics_{}.csv", input.name)), &d)?;
        }
        rows.extend(r.metrics.clone());
    }
    if !rows.is_empty() {
        write_csv(&out.join(METRICS_NAME), &rows)?;
        let n = rows.len() as f64;
        eprintln!(
            "{} files: mean SI-SDR {:.2} dB -> {:.2} dB",
            rows.len(),
            rows.iter().map(|r| r.si_sdr_in).sum::<f64>() / n,
            rows.iter().map(|r| r.si_sdr_out).sum::<f64>() / n
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub mean_si_sdr: f64,
    pub mean_si_sdr_improvement: f64,
    pub mean_lsd: f64,
    pub files: usize,
}

pub fn cmd_sweep_steps(
    cfg: &ExperimentConfig,
    manifest: Option<&Path>,
    k_list: &[usize],
    source: &ScoreSource,
    out: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    if k_list.is_empty() {
        return Err(CliError::Usage("--k-list needs at least one value".into()));
    }
    let inputs = load_corpus(cfg, manifest)?;
    if inputs.iter().any(|i| i.clean.is_none()) {
        return Err(CliError::Usage("sweep needs clean references".into()));
    }
    std::fs::create_dir_all(out)?;
    cfg.record(out)?;
    let mut rows = Vec::new();
    for &k in k_list {
        let sampler = SamplerConfig {
            k,
            mode: SamplerMode::Full,
            ..cfg.sampler
        };
        sampler.validate()?;
        let metrics = inputs
            .par_iter()
            .map(|i| {
                enhance_input(cfg, &sampler, i, source, false)
                    .map(|r| r.metrics.expect("clean reference present"))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let n = metrics.len() as f64;
        let row = SweepRow {
            k,
            mean_si_sdr: metrics.iter().map(|m| m.si_sdr_out).sum::<f64>() / n,
            mean_si_sdr_improvement: metrics.iter().map(|m| m.si_sdr_improvement).sum::<f64>() / n,
            mean_lsd: metrics.iter().map(|m| m.lsd_out).sum::<f64>() / n,
            files: metrics.len(),
        };
        eprintln!("K = {k}: mean SI-SDR {:.2} dB", row.mean_si_sdr);
        rows.push(row);
    }
    write_csv(&out.join(SWEEP_NAME), &rows)?;
    Ok(rows)
}

pub fn cmd_verify(cfg: &ExperimentConfig, opts: &VerifyOptions, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    cfg.record(out)?;
    let rows = run_checks(&cfg.schedule, opts)?;
    write_csv(&out.join(VERIFY_NAME), &rows)?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed).collect();
    let mut checks: Vec<&str> = Vec::new();
    for r in &rows {
        if !checks.contains(&r.check.as_str()) {
            checks.push(&r.check);
        }
    }
    for c in checks {
        let (n, bad) = rows
            .iter()
            .filter(|r| r.check == c)
            .fold((0, 0), |(n, b), r| (n + 1, b + usize::from(!r.passed)));
        eprintln!("{:<26} {}/{} passed", c, n - bad, n);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} of {} checks failed, see {}",
            failed.len(),
            rows.len(),
            out.join(VERIFY_NAME).display()
        )))
    }
}

/// Path of the manifest written by `generate` into `dir`.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(vpidm::corpus::MANIFEST_NAME)
}
