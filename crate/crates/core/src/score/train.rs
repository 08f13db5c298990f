use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::forward_sample;
use crate::error::{Error, Result};
use crate::rng::{seeded, SimRng};
use crate::schedule::Schedule;
use crate::spectrum::ComplexSpectrum;

use super::model::{ModelConfig, PatchMlp, Tape, TauTerms};
use super::sample_tau;

/// Clean and noisy spectra of one utterance in the compressed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x: ComplexSpectrum,
    pub y: ComplexSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::Sgd { momentum: 0.9 }
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Random bins per utterance used for each loss term; `None` uses all.
    pub bins_per_item: Option<usize>,
    pub clip_norm: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 3e-3,
            steps: 300,
            seed: 0,
            optimizer: Optimizer::adam(),
            bins_per_item: Some(2048),
            clip_norm: Some(1.0),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.bins_per_item == Some(0) {
            return Err(Error::InvalidConfig("bins_per_item must be positive".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PatchMlp,
    /// Mini-batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// One loss term with its draws fixed.
pub(crate) struct Item<'a> {
    pub pair: &'a TrainingPair,
    pub tau: f64,
    pub state: ComplexSpectrum,
    pub z: ComplexSpectrum,
    pub bins: Option<Vec<(usize, usize)>>,
}

/// Mean of `|G·Ψ + Z|²` over the item's bins and its parameter gradient.
pub(crate) fn item_loss_grad(model: &PatchMlp, item: &Item<'_>) -> Result<(f64, Vec<f64>)> {
    let terms = TauTerms::new(model.schedule(), item.tau)?;
    let slope = terms.weighted_score_slope();
    let emb = model.tau_embedding(item.tau);
    let mut tape = Tape::new(model.config());
    let mut grad = vec![0.0; model.params().len()];
    let (s, y) = (&item.state, &item.pair.y);
    let mut loss = 0.0;
    let mut visit = |l: usize, m: usize| {
        model.features(s, y, l, m, &emb, &mut tape.acts_mut()[0]);
        let out = model.forward(&mut tape);
        let (sv, yv) = (s.get(l, m), y.get(l, m));
        let x_hat = PatchMlp::clean_estimate(out, sv, yv);
        let r = terms.weighted_score(sv, yv, x_hat) + item.z.get(l, m);
        loss += r.norm_sqr();
        let d_xhat = Complex64::new(2.0 * r.re * slope, 2.0 * r.im * slope);
        model.backward(&tape, PatchMlp::output_grad(d_xhat, sv, yv), &mut grad);
    };
    let count = match &item.bins {
        Some(bins) => {
            for &(l, m) in bins {
                visit(l, m);
            }
            bins.len()
        }
        None => {
            for l in 0..s.frames() {
                for m in 0..s.bins() {
                    visit(l, m);
                }
            }
            s.len()
        }
    };
    let scale = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn apply_update(opt: &Optimizer, lr: f64, params: &mut [f64], grad: &[f64], st: &mut OptState) {
    st.t += 1;
    match *opt {
        Optimizer::Sgd { momentum } => {
            for ((p, g), m) in params.iter_mut().zip(grad).zip(st.m.iter_mut()) {
                *m = momentum * *m + g;
                *p -= lr * *m;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grad)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn draw_items<'a>(
    corpus: &'a [TrainingPair],
    cfg: &TrainConfig,
    schedule: &Schedule,
    rng: &mut SimRng,
) -> Result<Vec<Item<'a>>> {
    (0..cfg.batch_size)
        .map(|_| {
            let pair = &corpus[rng.gen_range(0..corpus.len())];
            let tau = sample_tau(schedule, rng);
            let (state, draw) = forward_sample(&pair.x, &pair.y, schedule, tau, rng)?;
            let bins = cfg.bins_per_item.map(|n| {
                (0..n)
                    .map(|_| {
                        (
                            rng.gen_range(0..pair.x.frames()),
                            rng.gen_range(0..pair.x.bins()),
                        )
                    })
                    .collect()
            });
            Ok(Item {
                pair,
                tau,
                state: state.s,
                z: draw.z,
                bins,
            })
        })
        .collect()
}

/// Minimizes the weighted score-matching loss over a [`PatchMlp`].
///
/// All random draws come from one stream seeded with `cfg.seed` and are
/// taken sequentially; per-item work runs in parallel and is reduced in
/// item order, so the loss trace does not depend on the thread count.
pub fn train_small_model(
    corpus: &[TrainingPair],
    cfg: &TrainConfig,
    schedule: &Schedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = seeded(cfg.seed);
    let mut model = PatchMlp::new(cfg.model.clone(), *schedule, &mut rng)?;
    let n = model.params().len();
    let mut st = OptState {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let items = draw_items(corpus, cfg, schedule, &mut rng)?;
        let results = items
            .par_iter()
            .map(|item| item_loss_grad(&model, item))
            .collect::<Result<Vec<_>>>()?;
        let q = results.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in &results {
            loss += l / q;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b / q;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        trace.push(loss);
        if let Some(max) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                grad.iter_mut().for_each(|g| *g *= max / norm);
            }
        }
        apply_update(&cfg.optimizer, cfg.learning_rate, model.params_mut(), &grad, &mut st);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(trace: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..trace.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let win = &trace[lo..=i];
            win.iter().sum::<f64>() / win.len() as f64
        })
        .collect()
}
