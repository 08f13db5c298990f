use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vpidm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpidm")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn column(csv_path: &Path, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(csv_path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

fn mean(v: &[String]) -> f64 {
    v.iter().map(|s| s.parse::<f64>().unwrap()).sum::<f64>() / v.len() as f64
}

/// Short corpus of `n` 1 s utterances at 0 dB; returns the manifest path.
fn small_corpus(dir: &TempDir, n: usize) -> PathBuf {
    let out = dir.path().join("corpus");
    let o = vpidm(&["generate", "--out", &p(&out), "--n", &n.to_string(), "--duration", "1.0", "--snr", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.jsonl")
}

#[test]
fn generate_writes_pairs_manifest_and_config() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(&dir, 4);
    let corpus = manifest.parent().unwrap();
    for i in 0..4 {
        assert!(corpus.join(format!("clean_{i:03}.wav")).exists());
        assert!(corpus.join(format!("noisy_{i:03}.wav")).exists());
    }
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 4);
    assert!(corpus.join("config.resolved.toml").exists());
}

#[test]
fn verify_passes_and_reports() {
    let dir = TempDir::new().unwrap();
    let o = vpidm(&["verify", "--paths", "2000", "--steps", "200", "--out", &p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let checks = column(&dir.path().join("verify_report.csv"), "check");
    assert!(checks.iter().any(|c| c == "g_finite_difference"));
    assert!(checks.iter().any(|c| c == "em_variance"));
    assert!(column(&dir.path().join("verify_report.csv"), "passed").iter().all(|v| v == "true"));
}

#[test]
fn perturbed_coefficient_fails_verification() {
    let dir = TempDir::new().unwrap();
    let o = vpidm(&["verify", "--perturb-g", "1e-3", "--paths", "2000", "--steps", "200", "--out", &p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("g_finite_difference"));
}

#[test]
fn veidm_verify_adds_drift_rows() {
    let dir = TempDir::new().unwrap();
    let o = vpidm(&["verify", "--variant", "veidm", "--paths", "2000", "--steps", "200", "--out", &p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let checks = column(&dir.path().join("verify_report.csv"), "check");
    assert!(checks.iter().any(|c| c == "veidm_drift"));
}

#[test]
fn empty_k_list_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = vpidm(&["sweep-steps", "--k-list", "--out", &p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_paths_and_flag_combinations() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir.path().join("out"));
    let missing = p(&dir.path().join("missing.wav"));
    assert_eq!(code(&vpidm(&["enhance", "--in", &missing, "--out", &out])), 3);
    let manifest = small_corpus(&dir, 1);
    let noisy = p(&manifest.parent().unwrap().join("noisy_000.wav"));
    assert_eq!(code(&vpidm(&["enhance", "--in", &noisy, "--out", &out])), 2);
    let o = vpidm(&["enhance", "--in", &p(&manifest), "--score", "checkpoint", "--checkpoint", &missing, "--out", &out]);
    assert_eq!(code(&o), 3);
    assert_eq!(code(&vpidm(&["enhance", "--in", &p(&manifest), "--k", "1", "--out", &out])), 2);
}

#[test]
fn flag_overrides_config_and_is_logged() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(&dir, 1);
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, "[sampler]\nk = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = vpidm(&["enhance", "--config", &p(&config), "--in", &p(&manifest), "--k", "6", "--out", &p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("override: sampler.k = 6 (config had 5)"));
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("k = 6"), "{resolved}");
}

#[test]
fn early_stop_mode_extracts_the_mid_output() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(&dir, 2);
    let (full, es) = (dir.path().join("full"), dir.path().join("es"));
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["enhance", "--in", &*manifest.to_str().unwrap(), "--diagnostics"];
        let o = p(out);
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", &o]);
        let r = vpidm(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    };
    run(&full, &[]);
    run(&es, &["--mode", "early-stop", "--k1", "12"]);
    assert_eq!(column(&full.join("diagnostics_000.csv"), "k").len(), 25);
    let ks = column(&es.join("diagnostics_000.csv"), "k");
    assert_eq!(ks.first().map(String::as_str), Some("25"));
    assert_eq!(ks.last().map(String::as_str), Some("13"));
    let residual: Vec<f64> = column(&es.join("diagnostics_000.csv"), "residual_noise")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(residual.windows(2).all(|w| w[1] < w[0]), "{residual:?}");
    assert_ne!(
        std::fs::read(full.join("enhanced_000.wav")).unwrap(),
        std::fs::read(es.join("enhanced_000.wav")).unwrap()
    );
}

#[test]
fn sweep_row_matches_enhance_aggregate() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(&dir, 3);
    let (sweep, enh) = (dir.path().join("sweep"), dir.path().join("enh"));
    let o = vpidm(&["sweep-steps", "--manifest", &p(&manifest), "--k-list", "10,25", "--out", &p(&sweep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = vpidm(&["enhance", "--in", &p(&manifest), "--out", &p(&enh)]);
    assert_eq!(code(&o), 0);
    let rows = column(&sweep.join("sweep.csv"), "mean_si_sdr");
    assert_eq!(column(&sweep.join("sweep.csv"), "k"), ["10", "25"]);
    let enhance_mean = mean(&column(&enh.join("metrics.csv"), "si_sdr_out"));
    assert!((rows[1].parse::<f64>().unwrap() - enhance_mean).abs() < 1e-9);
}

#[test]
fn train_then_enhance_with_checkpoint() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(&dir, 2);
    let model = dir.path().join("model");
    let o = vpidm(&["train", "--manifest", &p(&manifest), "--steps", "20", "--out", &p(&model)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(model.join("checkpoint.json").exists());
    assert_eq!(column(&model.join("loss_trace.csv"), "loss").len(), 20);
    let ckpt = model.join("checkpoint.json");
    let enh = dir.path().join("enh");
    let o = vpidm(&[
        "enhance", "--in", &p(&manifest), "--score", "checkpoint", "--checkpoint", &p(&ckpt), "--k", "5", "--out", &p(&enh),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(enh.join("enhanced_001.wav").exists());
    // A checkpoint trained for one schedule is rejected under another.
    let o = vpidm(&[
        "enhance", "--variant", "vpdm", "--in", &p(&manifest), "--score", "checkpoint", "--checkpoint", &p(&ckpt),
        "--out", &p(&enh),
    ]);
    assert_eq!(code(&o), 2);
}
