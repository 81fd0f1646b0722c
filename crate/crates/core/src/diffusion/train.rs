//! Velocity-matching training loop.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{featurize, Denoiser};
use super::schedule::{make_schedule, noise, velocity_target, NoiseSchedule};
use super::unet::UNetConfig;
use crate::error::{Error, Result};
use crate::field::{encode_field, DensityField, Latent};
use crate::problem::ProblemSpec;
use crate::rng::{gaussian_latent, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Cosine decay of the learning rate to this fraction of `lr` at the last step.
    pub final_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Random horizontal and vertical mirroring of (field, spec) pairs.
    pub flip_augment: bool,
    /// Length of the training schedule; the network sees `t/T` only.
    pub schedule_steps: usize,
    /// Timesteps are drawn uniformly from `1..=max_t_frac·T`.
    pub max_t_frac: f64,
    pub seed: u64,
    pub log_every: usize,
    pub network: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 8,
            lr: 5e-4,
            warmup: 100,
            final_lr_frac: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            ema_decay: 0.995,
            clip_norm: 1.0,
            flip_augment: true,
            schedule_steps: 200,
            max_t_frac: 1.0,
            seed: 0,
            log_every: 50,
            network: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidRequest(m.to_owned()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(0.0..1.0).contains(&self.ema_decay) {
            return bad("beta1, beta2 and ema_decay must lie in [0,1)");
        }
        if !(self.max_t_frac > 0.0 && self.max_t_frac <= 1.0) {
            return bad("max_t_frac must lie in (0,1]");
        }
        if self.schedule_steps == 0 {
            return bad("schedule_steps must be positive");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let u = ((step - self.warmup) as f64 / span).min(1.0);
        let c = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
        self.lr * (self.final_lr_frac + (1.0 - self.final_lr_frac) * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

impl std::fmt::Display for TrainLogLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step {:6}  loss {:.6}  lr {:.3e}", self.step, self.loss, self.lr)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Probe-set loss of the initial parameters.
    pub initial_loss: f64,
    /// Probe-set loss of the returned (averaged) parameters.
    pub final_loss: f64,
    pub log: Vec<TrainLogLine>,
}

struct Example {
    z0: Latent,
    spec: ProblemSpec,
}

/// A fixed set of `(example, t, ε)` draws for comparing parameter vectors.
pub struct ProbeSet {
    items: Vec<(usize, usize, Latent)>,
}

impl ProbeSet {
    pub fn new(corpus_len: usize, width: usize, height: usize, sched: &NoiseSchedule, max_t_frac: f64, count: usize, seed: u64) -> Self {
        let mut rng = stream(seed, u64::MAX);
        let tmax = max_t(sched, max_t_frac);
        let items = (0..count)
            .map(|_| {
                let k = rng.gen_range(0..corpus_len);
                let t = rng.gen_range(1..=tmax);
                (k, t, gaussian_latent(&mut rng, width, height))
            })
            .collect();
        Self { items }
    }
}

fn max_t(sched: &NoiseSchedule, frac: f64) -> usize {
    ((frac * sched.total_steps as f64).floor() as usize).clamp(1, sched.total_steps)
}

fn prepare(corpus: &[(DensityField, ProblemSpec)]) -> Result<Vec<Example>> {
    if corpus.is_empty() {
        return Err(Error::InvalidRequest("empty training corpus".into()));
    }
    let (w, h) = (corpus[0].0.width(), corpus[0].0.height());
    corpus
        .iter()
        .map(|(f, s)| {
            if (f.width(), f.height()) != (w, h) {
                return Err(Error::InvalidRequest("corpus fields must share one shape".into()));
            }
            Ok(Example { z0: encode_field(f), spec: s.clone() })
        })
        .collect()
}

fn sample_loss(model: &Denoiser, params: &[f32], sched: &NoiseSchedule, ex: &Example, t: usize, eps: &Latent, grads: Option<&mut [f32]>, weight: f64) -> f64 {
    let zt = noise(sched, &ex.z0, t, eps);
    let target = velocity_target(sched, &ex.z0, eps, t);
    let z: Vec<f32> = zt.values().iter().map(|v| *v as f32).collect();
    let (w, h) = (zt.width(), zt.height());
    let (pred, cache) = model.net.forward(params, &z, h, w, sched.t_frac(t) as f32, &featurize(&ex.spec));
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut dv = vec![0.0f32; pred.len()];
    for k in 0..pred.len() {
        let r = pred[k] as f64 - target.values()[k];
        loss += r * r;
        dv[k] = (2.0 * r / n * weight) as f32;
    }
    if let Some(g) = grads {
        model.net.backward(params, Some(g), &cache, &dv);
    }
    loss / n
}

/// Mean velocity-matching loss of `params` over the probe set.
pub fn probe_loss(model: &Denoiser, params: &[f32], corpus: &[(DensityField, ProblemSpec)], probes: &ProbeSet) -> Result<f64> {
    let examples = prepare(corpus)?;
    let sched = make_schedule(model.train_steps)?;
    let total: f64 = probes
        .items
        .iter()
        .map(|(k, t, eps)| sample_loss(model, params, &sched, &examples[*k], *t, eps, None, 1.0))
        .sum();
    Ok(total / probes.items.len() as f64)
}

/// Trains from `init` (or a fresh network) and returns the EMA weights.
pub fn train(
    corpus: &[(DensityField, ProblemSpec)],
    cfg: &TrainConfig,
    init: Option<Denoiser>,
    mut on_log: impl FnMut(&TrainLogLine),
) -> Result<(Denoiser, TrainReport)> {
    cfg.validate()?;
    let examples = prepare(corpus)?;
    let sched = make_schedule(cfg.schedule_steps)?;
    let mut model = init.unwrap_or_else(|| Denoiser::new(cfg.network.clone(), cfg.seed, cfg.schedule_steps));
    model.train_steps = cfg.schedule_steps;
    let (w, h) = (examples[0].z0.width(), examples[0].z0.height());
    let d = model.net.config.divisor();
    if w % d != 0 || h % d != 0 {
        return Err(Error::InvalidRequest(format!("corpus shape {w}x{h} not divisible by {d}")));
    }

    let probes = ProbeSet::new(examples.len(), w, h, &sched, cfg.max_t_frac, 32, cfg.seed);
    let probe = |params: &[f32]| -> f64 {
        let total: f64 = probes
            .items
            .iter()
            .map(|(k, t, eps)| sample_loss(&model, params, &sched, &examples[*k], *t, eps, None, 1.0))
            .sum();
        total / probes.items.len() as f64
    };
    let initial_loss = probe(&model.params);

    let np = model.params.len();
    let mut params = model.params.clone();
    let mut ema = params.clone();
    let mut m = vec![0.0f64; np];
    let mut v = vec![0.0f64; np];
    let mut grads = vec![0.0f32; np];
    let mut rng = stream(cfg.seed, 1);
    let tmax = max_t(&sched, cfg.max_t_frac);
    let mut log = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0usize;

    for step in 0..cfg.steps {
        grads.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let ex = &examples[rng.gen_range(0..examples.len())];
            let flipped;
            let ex = if cfg.flip_augment {
                let (fx, fy) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
                let mut z0 = ex.z0.clone();
                let mut spec = ex.spec.clone();
                if fx {
                    z0 = Latent(z0.0.flip_x());
                    spec = spec.flip_x();
                }
                if fy {
                    z0 = Latent(z0.0.flip_y());
                    spec = spec.flip_y();
                }
                flipped = Example { z0, spec };
                &flipped
            } else {
                ex
            };
            let t = rng.gen_range(1..=tmax);
            let eps = gaussian_latent(&mut rng, w, h);
            loss += sample_loss(&model, &params, &sched, ex, t, &eps, Some(&mut grads), 1.0 / cfg.batch as f64);
        }
        loss /= cfg.batch as f64;
        let lr = cfg.lr_at(step);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, lr });
        }

        let gnorm = grads.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
        let clip = if cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm { cfg.clip_norm / gnorm } else { 1.0 };
        let k = (step + 1) as i32;
        let (bc1, bc2) = (1.0 - cfg.beta1.powi(k), 1.0 - cfg.beta2.powi(k));
        for i in 0..np {
            let g = grads[i] as f64 * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let upd = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
            params[i] -= upd as f32;
        }
        // Bias-free EMA warm start: early steps track the raw weights closely.
        let decay = cfg.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64)) as f32;
        for (e, p) in ema.iter_mut().zip(&params) {
            *e = decay * *e + (1.0 - decay) * *p;
        }

        running += loss;
        running_n += 1;
        if cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            let line = TrainLogLine { step: step + 1, loss: running / running_n as f64, lr };
            on_log(&line);
            log.push(line);
            running = 0.0;
            running_n = 0;
        }
    }

    let final_params = if cfg.steps > 0 { ema } else { params };
    let final_loss = probe(&final_params);
    model.params = final_params;
    Ok((model, TrainReport { initial_loss, final_loss, log }))
}
