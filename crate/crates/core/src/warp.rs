//! Gaussian drag warps: displacement field, inverse-map grid resampling and
//! fixed-point point warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::problem::ProblemSpec;

/// Resolution of the probe grid used to check summed multi-handle fields.
pub const PROBE_RESOLUTION: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub sigma: f64,
}

impl Handle {
    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Largest spatial derivative of this handle's displacement, `‖Δ‖ e^{-1/2} / σ`.
    pub fn lipschitz(&self) -> f64 {
        self.norm() * (-0.5f64).exp() / self.sigma
    }
}

/// One or more drag handles whose displacements are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWarpSpec", into = "RawWarpSpec")]
pub struct WarpSpec {
    handles: Vec<Handle>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWarpSpec {
    handles: Vec<Handle>,
}

impl TryFrom<RawWarpSpec> for WarpSpec {
    type Error = Error;
    fn try_from(r: RawWarpSpec) -> Result<Self> {
        WarpSpec::new(r.handles)
    }
}

impl From<WarpSpec> for RawWarpSpec {
    fn from(w: WarpSpec) -> Self {
        RawWarpSpec { handles: w.handles }
    }
}

impl WarpSpec {
    /// Validates every handle against `‖Δ‖ < σ√e` and the summed field
    /// against a unit Jacobian-norm bound on the probe grid.
    pub fn new(handles: Vec<Handle>) -> Result<Self> {
        if handles.is_empty() {
            return Err(Error::InvalidRequest("warp needs at least one handle".into()));
        }
        for (k, h) in handles.iter().enumerate() {
            let finite = [h.x, h.y, h.dx, h.dy, h.sigma].iter().all(|v| v.is_finite());
            if !finite || !(h.sigma > 0.0) {
                return Err(Error::InvalidRequest(format!("handle {k}: sigma must be positive and all values finite")));
            }
            let bound = h.sigma * 0.5f64.exp();
            if !(h.norm() < bound) {
                return Err(Error::ContractionBound(format!(
                    "handle {k}: |delta| = {} >= sigma*sqrt(e) = {bound}",
                    h.norm()
                )));
            }
        }
        let spec = WarpSpec { handles };
        if spec.handles.len() > 1 {
            let l = spec.probe_lipschitz();
            if !(l < 1.0) {
                return Err(Error::ContractionBound(format!("summed displacement has Jacobian norm {l} >= 1 on the probe grid")));
            }
        }
        Ok(spec)
    }

    pub fn single(x: f64, y: f64, dx: f64, dy: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![Handle { x, y, dx, dy, sigma }])
    }

    pub fn handles(&self) -> &[Handle] {
        &self.handles
    }

    /// True when every handle has zero displacement.
    pub fn is_identity(&self) -> bool {
        self.handles.iter().all(|h| h.norm() == 0.0)
    }

    /// Upper bound on the Lipschitz constant of the summed displacement.
    pub fn lipschitz_bound(&self) -> f64 {
        self.handles.iter().map(Handle::lipschitz).sum()
    }

    /// Largest spectral norm of the displacement Jacobian on the probe grid.
    pub fn probe_lipschitz(&self) -> f64 {
        let n = PROBE_RESOLUTION;
        let mut best = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let p = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                best = best.max(spectral_norm(self.jacobian(p)));
            }
        }
        best
    }

    /// `∂u/∂x` as `[[dux/dx, dux/dy], [duy/dx, duy/dy]]`.
    pub fn jacobian(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for h in &self.handles {
            let (rx, ry) = (p[0] - h.x, p[1] - h.y);
            let s2 = h.sigma * h.sigma;
            let g = (-(rx * rx + ry * ry) / (2.0 * s2)).exp();
            let (gx, gy) = (-g * rx / s2, -g * ry / s2);
            m[0][0] += h.dx * gx;
            m[0][1] += h.dx * gy;
            m[1][0] += h.dy * gx;
            m[1][1] += h.dy * gy;
        }
        m
    }

    /// Horizontal mirror of every handle.
    pub fn flip_x(&self) -> WarpSpec {
        WarpSpec { handles: self.handles.iter().map(|h| Handle { x: 1.0 - h.x, dx: -h.dx, ..*h }).collect() }
    }
}

fn spectral_norm(m: [[f64; 2]; 2]) -> f64 {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    ((s + disc) / 2.0).sqrt()
}

/// `u(x) = Σ exp(−‖x − h‖² / 2σ²) Δ`.
pub fn displacement(spec: &WarpSpec, x: [f64; 2]) -> [f64; 2] {
    let mut u = [0.0, 0.0];
    for h in &spec.handles {
        let (rx, ry) = (x[0] - h.x, x[1] - h.y);
        let g = (-(rx * rx + ry * ry) / (2.0 * h.sigma * h.sigma)).exp();
        u[0] += g * h.dx;
        u[1] += g * h.dy;
    }
    u
}

/// Inverse-map resampling `out(x) = f(x − u(x))`, bilinear with border clamp.
pub fn warp_grid(f: &Grid, spec: &WarpSpec) -> Grid {
    Grid::from_fn(f.width, f.height, |i, j| {
        let x = f.center(i, j);
        let u = displacement(spec, x);
        f.sample_cells(i as f64 - u[0] * f.width as f64, j as f64 - u[1] * f.height as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointWarpOptions {
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PointWarpOptions {
    fn default() -> Self {
        Self { rho: 0.8, max_iter: 200, tol: 1e-8 }
    }
}

/// Residual `‖p − u(p) − p_src‖` of a candidate destination.
pub fn point_residual(spec: &WarpSpec, p_src: [f64; 2], p: [f64; 2]) -> f64 {
    let u = displacement(spec, p);
    (p[0] - u[0] - p_src[0]).hypot(p[1] - u[1] - p_src[1])
}

/// Solves `p = p_src + u(p)` by relaxed fixed-point iteration. Returns the
/// point and the residual after every iteration.
pub fn warp_point_traced(spec: &WarpSpec, p_src: [f64; 2], opts: &PointWarpOptions) -> Result<([f64; 2], Vec<f64>)> {
    if !(opts.rho > 0.0 && opts.rho <= 1.0) {
        return Err(Error::InvalidRequest(format!("relaxation rho must lie in (0,1], got {}", opts.rho)));
    }
    let mut p = p_src;
    let mut trace = vec![point_residual(spec, p_src, p)];
    for _ in 0..opts.max_iter {
        if *trace.last().expect("non-empty") <= opts.tol {
            return Ok((p, trace));
        }
        let u = displacement(spec, p);
        p = [
            (1.0 - opts.rho) * p[0] + opts.rho * (p_src[0] + u[0]),
            (1.0 - opts.rho) * p[1] + opts.rho * (p_src[1] + u[1]),
        ];
        trace.push(point_residual(spec, p_src, p));
    }
    let residual = *trace.last().expect("non-empty");
    if residual <= opts.tol {
        Ok((p, trace))
    } else {
        Err(Error::WarpNonConvergence { residual, iters: opts.max_iter })
    }
}

pub fn warp_point(p_src: [f64; 2], spec: &WarpSpec, opts: &PointWarpOptions) -> Result<[f64; 2]> {
    Ok(warp_point_traced(spec, p_src, opts)?.0)
}

/// Moves every support and load through the warp. Fixity, forces, volume
/// fraction and geometry are unchanged; locations are clamped to the domain.
pub fn warp_problem(spec: &ProblemSpec, w: &WarpSpec, opts: &PointWarpOptions) -> Result<ProblemSpec> {
    let mut out = spec.clone();
    let map = |x: f64, y: f64| -> Result<(f64, f64)> {
        let p = warp_point([x, y], w, opts)?;
        Ok((p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)))
    };
    for s in &mut out.supports {
        (s.x, s.y) = map(s.x, s.y)?;
    }
    for l in &mut out.loads {
        (l.x, l.y) = map(l.x, l.y)?;
    }
    Ok(out)
}

/// Each handle pushed through the point warp.
pub fn achieved_handle(w: &WarpSpec, opts: &PointWarpOptions) -> Result<Vec<[f64; 2]>> {
    w.handles.iter().map(|h| warp_point([h.x, h.y], w, opts)).collect()
}
