//! Deterministic DDIM reverse sampling with reference guidance.

use serde::{Deserialize, Serialize};

use super::model::VelocityModel;
use super::schedule::{ddim_update, predict_z0, NoiseSchedule};
use crate::error::{Error, Result};
use crate::field::{Grid, Latent};
use crate::problem::ProblemSpec;
use crate::warp::Handle;

/// Stabilizer in the weighted-loss normalization.
pub const WEIGHT_EPS: f64 = 1e-8;
/// Default sigmoid width of the guidance weight map, in domain units.
pub const WEIGHT_SHARPNESS: f64 = 0.05;
/// Default influence radius of a handle as a multiple of its sigma. The drag
/// displacement at this distance is under 5% of the handle offset.
pub const INFLUENCE_RADIUS: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Step size `s` of the gradient update on `z_t`.
    pub scale: f64,
    /// Apply guidance on every `stride`-th reverse step (1 = every step).
    pub stride: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 1000.0, stride: 1 }
    }
}

/// Reference and optional spatial weight for the guidance loss.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceTarget<'a> {
    pub z_ref: &'a Latent,
    pub weight: Option<&'a Grid>,
}

#[derive(Debug, Clone)]
pub struct GuidanceOutcome {
    pub z: Latent,
    /// Loss at the input `z_t`.
    pub loss: f64,
    pub grad_norm: f64,
    /// Set when the gradient was non-finite and the step was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleTrace {
    /// `(t, loss)` for every guided step.
    pub losses: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

/// Guidance loss on the estimated clean latent and its gradient with respect
/// to `ẑ0`. Unweighted: `mean(r²)`. Weighted: `mean((m r)²) / (mean(m) + ε)`.
pub fn guidance_loss(z0_hat: &Latent, target: &GuidanceTarget) -> Result<(f64, Grid)> {
    let r = &z0_hat.0;
    let zr = &target.z_ref.0;
    if !r.same_shape(zr) {
        return Err(Error::InvalidRequest("reference latent shape mismatch".into()));
    }
    let n = r.len() as f64;
    match target.weight {
        None => {
            let res = r.zip_with(zr, |a, b| a - b);
            let loss = res.values.iter().map(|v| v * v).sum::<f64>() / n;
            Ok((loss, res.map(|v| 2.0 * v / n)))
        }
        Some(m) => {
            if !m.same_shape(r) {
                return Err(Error::InvalidRequest("weight map shape mismatch".into()));
            }
            let denom = n * (m.mean() + WEIGHT_EPS);
            let mut loss = 0.0;
            let mut g = Grid::filled(r.width, r.height, 0.0);
            for k in 0..r.len() {
                let w2 = m.values[k] * m.values[k];
                let d = r.values[k] - zr.values[k];
                loss += w2 * d * d;
                g.values[k] = 2.0 * w2 * d / denom;
            }
            Ok((loss / denom, g))
        }
    }
}

/// One gradient step `z_t ← z_t − s ∇L(ẑ0(z_t))`. The gradient flows through
/// both terms of `ẑ0 = √ᾱ z_t − √(1−ᾱ) v(z_t)`.
#[allow(clippy::too_many_arguments)]
pub fn guidance_step(
    model: &dyn VelocityModel,
    sched: &NoiseSchedule,
    spec: &ProblemSpec,
    z_t: &Latent,
    t: usize,
    target: &GuidanceTarget,
    scale: f64,
) -> Result<GuidanceOutcome> {
    let (v, vjp) = model.velocity_with_vjp(z_t, t, sched, spec)?;
    let z0_hat = predict_z0(sched, z_t, t, &v);
    let (loss, g) = guidance_loss(&z0_hat, target)?;
    let a = sched.alpha_bar(t);
    let (sa, sb) = (a.sqrt(), (1.0 - a).max(0.0).sqrt());
    let jt = vjp(&Latent(g.clone()));
    let grad = g.zip_with(&jt.0, |gi, ji| sa * gi - sb * ji);
    let grad_norm = grad.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Ok(GuidanceOutcome { z: z_t.clone(), loss, grad_norm, skipped: true });
    }
    let z = if scale == 0.0 { z_t.clone() } else { Latent(z_t.0.zip_with(&grad, |z, d| z - scale * d)) };
    Ok(GuidanceOutcome { z, loss, grad_norm, skipped: false })
}

/// One reverse step `t → t−1`.
pub fn ddim_step(model: &dyn VelocityModel, sched: &NoiseSchedule, spec: &ProblemSpec, z_t: &Latent, t: usize) -> Result<Latent> {
    if t == 0 || t > sched.total_steps {
        return Err(Error::InvalidRequest(format!("reverse step from t={t} outside 1..={}", sched.total_steps)));
    }
    let v = model.velocity(z_t, t, sched, spec)?;
    Ok(ddim_update(sched, z_t, t, &v))
}

/// Runs the reverse trajectory from `z_tau` at step `tau` down to 0, applying
/// a guidance step before each DDIM step when a target is given.
pub fn denoise(
    model: &dyn VelocityModel,
    sched: &NoiseSchedule,
    spec: &ProblemSpec,
    z_tau: &Latent,
    tau: usize,
    target: Option<&GuidanceTarget>,
    cfg: &GuidanceConfig,
) -> Result<(Latent, SampleTrace)> {
    if tau > sched.total_steps {
        return Err(Error::InvalidRequest(format!("tau {tau} exceeds total steps {}", sched.total_steps)));
    }
    let stride = cfg.stride.max(1);
    let mut trace = SampleTrace::default();
    let mut z = z_tau.clone();
    for t in (1..=tau).rev() {
        if let Some(tg) = target {
            if (tau - t) % stride == 0 {
                let out = guidance_step(model, sched, spec, &z, t, tg, cfg.scale)?;
                trace.losses.push((t, out.loss));
                if out.skipped {
                    trace.warnings.push(format!("t={t}: non-finite guidance gradient, step skipped"));
                }
                z = out.z;
            }
        }
        z = ddim_step(model, sched, spec, &z, t)?;
        if let Some(index) = z.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptedLatent { index });
        }
    }
    Ok((z, trace))
}

/// Guidance weight: `min_k sigmoid((|x − h*_k| − r_k) / sharpness)` with
/// `r_k = radius · σ_k`, evaluated at cell centers. Near 0 around each achieved
/// handle (free to change) and 1 far away (held to the reference).
pub fn warp_weight_map(achieved: &[[f64; 2]], handles: &[Handle], width: usize, height: usize, radius: f64, sharpness: f64) -> Grid {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    Grid::from_fn(width, height, |i, j| {
        let x = (i as f64 + 0.5) / width as f64;
        let y = (j as f64 + 0.5) / height as f64;
        achieved
            .iter()
            .zip(handles)
            .map(|(p, h)| sig(((x - p[0]).hypot(y - p[1]) - radius * h.sigma) / sharpness))
            .fold(1.0, f64::min)
    })
}
