//! Cosine noise schedule and the closed-form forward/inverse relations of the
//! velocity parameterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, Latent};

const COSINE_OFFSET: f64 = 0.008;
const ALPHA_BAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub total_steps: usize,
    /// `ᾱ_0 .. ᾱ_T`.
    pub alpha_bar: Vec<f64>,
}

/// `ᾱ` at continuous time `u = t/T ∈ [0,1]`, normalized so that `ᾱ(0) = 1`.
pub fn cosine_alpha_bar(u: f64) -> f64 {
    let f = |u: f64| ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    (f(u) / f(0.0)).clamp(ALPHA_BAR_FLOOR, 1.0)
}

pub fn make_schedule(total_steps: usize) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(Error::InvalidRequest("schedule needs at least one step".into()));
    }
    let t = total_steps as f64;
    let alpha_bar = (0..=total_steps).map(|k| cosine_alpha_bar(k as f64 / t)).collect();
    Ok(NoiseSchedule { total_steps, alpha_bar })
}

impl NoiseSchedule {
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    #[inline]
    pub fn t_frac(&self, t: usize) -> f64 {
        t as f64 / self.total_steps as f64
    }

    fn coeffs(&self, t: usize) -> (f64, f64) {
        let a = self.alpha_bar[t];
        (a.sqrt(), (1.0 - a).max(0.0).sqrt())
    }
}

fn combine(a: &Latent, ca: f64, b: &Latent, cb: f64) -> Latent {
    Latent(a.0.zip_with(&b.0, |x, y| ca * x + cb * y))
}

/// `√ᾱ_t z0 + √(1−ᾱ_t) ε`.
pub fn noise(sched: &NoiseSchedule, z0: &Latent, t: usize, eps: &Latent) -> Latent {
    let (sa, sb) = sched.coeffs(t);
    combine(z0, sa, eps, sb)
}

/// `√ᾱ_t ε − √(1−ᾱ_t) z0`.
pub fn velocity_target(sched: &NoiseSchedule, z0: &Latent, eps: &Latent, t: usize) -> Latent {
    let (sa, sb) = sched.coeffs(t);
    combine(eps, sa, z0, -sb)
}

/// `ẑ0 = √ᾱ_t z_t − √(1−ᾱ_t) v`.
pub fn predict_z0(sched: &NoiseSchedule, z_t: &Latent, t: usize, v: &Latent) -> Latent {
    let (sa, sb) = sched.coeffs(t);
    combine(z_t, sa, v, -sb)
}

/// `ε̂ = √(1−ᾱ_t) z_t + √ᾱ_t v`.
pub fn predict_eps(sched: &NoiseSchedule, z_t: &Latent, t: usize, v: &Latent) -> Latent {
    let (sa, sb) = sched.coeffs(t);
    combine(z_t, sb, v, sa)
}

/// `√ᾱ_{t−1} ẑ0 + √(1−ᾱ_{t−1}) ε̂`.
pub fn ddim_update(sched: &NoiseSchedule, z_t: &Latent, t: usize, v: &Latent) -> Latent {
    let z0 = predict_z0(sched, z_t, t, v);
    let eps = predict_eps(sched, z_t, t, v);
    let (sa, sb) = sched.coeffs(t - 1);
    combine(&z0, sa, &eps, sb)
}

/// A zero latent of the given shape.
pub fn zeros(width: usize, height: usize) -> Latent {
    Latent(Grid::filled(width, height, 0.0))
}
