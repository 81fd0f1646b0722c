use std::fmt;

use serde::{Deserialize, Serialize};

use super::linear::{solve_direct, solve_pcg, BandMatrix};
use super::{FemModel, LinearSolver, Mesh};
use crate::error::{Error, Result};
use crate::field::{DensityField, Grid};
use crate::problem::ProblemSpec;

const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Nodal displacements, two dofs per node (column-major node order).
    pub displacements: Vec<f64>,
    /// `fᵀu`.
    pub compliance: f64,
    /// Unit-modulus strain energy `u_eᵀ K_e u_e` per element, row-major.
    pub element_energy: Vec<f64>,
}

impl SolveResult {
    /// Per-element compliance `E(t_e) u_eᵀ K_e u_e`.
    pub fn element_compliance(&self, field: &DensityField, model: &FemModel) -> Vec<f64> {
        field.values().iter().zip(&self.element_energy).map(|(t, e)| model.element_modulus(*t) * e).collect()
    }
}

/// Applies supports and loads of `spec` to `mesh`: returns the fixed-dof flags and the load vector.
fn boundary_conditions(mesh: &Mesh, spec: &ProblemSpec) -> (Vec<bool>, Vec<f64>) {
    let mut fixed = vec![false; mesh.num_dofs()];
    let mut f = vec![0.0; mesh.num_dofs()];
    for s in &spec.supports {
        let (i, j) = mesh.snap(s.x, s.y);
        let n = mesh.node(i, j);
        fixed[2 * n] |= s.fix_x;
        fixed[2 * n + 1] |= s.fix_y;
    }
    for l in &spec.loads {
        let (i, j) = mesh.snap(l.x, l.y);
        let n = mesh.node(i, j);
        f[2 * n] += l.fx;
        f[2 * n + 1] += l.fy;
    }
    (fixed, f)
}

/// Assembles `K(T)`, eliminates supported dofs and solves `Ku = f`.
pub fn solve(field: &DensityField, spec: &ProblemSpec, model: &FemModel) -> Result<SolveResult> {
    let mesh = Mesh::new(field.width(), field.height());
    let (fixed, f_full) = boundary_conditions(&mesh, spec);
    let ndof = mesh.num_dofs();
    let mut reduced = vec![usize::MAX; ndof];
    let mut n_free = 0;
    for (d, fx) in fixed.iter().enumerate() {
        if !fx {
            reduced[d] = n_free;
            n_free += 1;
        }
    }
    let mut u = vec![0.0; ndof];
    if f_full.iter().all(|v| *v == 0.0) || n_free == 0 {
        return Ok(SolveResult {
            displacements: u,
            compliance: 0.0,
            element_energy: vec![0.0; field.values().len()],
        });
    }
    let ke = model.ke();
    let mut k = BandMatrix::zeros(n_free, mesh.bandwidth());
    for ely in 0..mesh.nely {
        for elx in 0..mesh.nelx {
            let e = model.element_modulus(field.at(elx, ely));
            let edof = mesh.edofs(elx, ely);
            for a in 0..8 {
                let ra = reduced[edof[a]];
                if ra == usize::MAX {
                    continue;
                }
                for b in 0..8 {
                    let rb = reduced[edof[b]];
                    if rb == usize::MAX || rb < ra {
                        continue;
                    }
                    k.add_upper(ra, rb, e * ke[a][b]);
                }
            }
        }
    }
    let f: Vec<f64> = (0..ndof).filter(|d| !fixed[*d]).map(|d| f_full[d]).collect();
    let x = match model.solver {
        LinearSolver::BandCholesky => solve_direct(&k, &f, RESIDUAL_TOL)?,
        LinearSolver::ConjugateGradient => solve_pcg(&k, &f, 1e-10, 20 * n_free)?,
    };
    for d in 0..ndof {
        if reduced[d] != usize::MAX {
            u[d] = x[reduced[d]];
        }
    }
    let compliance: f64 = f_full.iter().zip(&u).map(|(a, b)| a * b).sum();
    let mut element_energy = Vec::with_capacity(mesh.nelx * mesh.nely);
    for ely in 0..mesh.nely {
        for elx in 0..mesh.nelx {
            let edof = mesh.edofs(elx, ely);
            let ue: [f64; 8] = std::array::from_fn(|a| u[edof[a]]);
            let mut acc = 0.0;
            for a in 0..8 {
                let row: f64 = (0..8).map(|b| ke[a][b] * ue[b]).sum();
                acc += ue[a] * row;
            }
            element_energy.push(acc);
        }
    }
    Ok(SolveResult { displacements: u, compliance: compliance.max(0.0), element_energy })
}

/// Compliance of `field` under `spec`.
pub fn compliance(field: &DensityField, spec: &ProblemSpec, model: &FemModel) -> Result<f64> {
    Ok(solve(field, spec, model)?.compliance)
}

/// `dc/dt_e = −p t_e^{p−1} (E0 − Emin) u_eᵀ K_e u_e`, row-major.
pub fn sensitivity(field: &DensityField, model: &FemModel, result: &SolveResult) -> Vec<f64> {
    field
        .values()
        .iter()
        .zip(&result.element_energy)
        .map(|(t, e)| -model.element_modulus_slope(*t) * e)
        .collect()
}

/// Cone weights `max(0, r − dist)` within a square window.
fn cone_neighbors(radius: f64) -> Vec<(isize, isize, f64)> {
    let reach = radius.ceil() as isize;
    let mut out = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let w = radius - ((di * di + dj * dj) as f64).sqrt();
            if w > 0.0 {
                out.push((di, dj, w));
            }
        }
    }
    out
}

/// Cone-weighted local average of densities. `radius <= 1` is the identity.
pub fn density_filter(field: &DensityField, radius: f64) -> DensityField {
    if radius <= 1.0 {
        return field.clone();
    }
    let (w, h) = (field.width() as isize, field.height() as isize);
    let nb = cone_neighbors(radius);
    let g = Grid::from_fn(field.width(), field.height(), |i, j| {
        let (mut num, mut den) = (0.0, 0.0);
        for &(di, dj, wt) in &nb {
            let (x, y) = (i as isize + di, j as isize + dj);
            if x >= 0 && y >= 0 && x < w && y < h {
                num += wt * field.at(x as usize, y as usize);
                den += wt;
            }
        }
        num / den
    });
    DensityField::from_grid_clamped(g)
}

/// Mesh-independency filter on sensitivities:
/// `dĉ_e = Σ H_ef t_f dc_f / (max(t_e, 1e-3) Σ H_ef)`.
pub fn sensitivity_filter(field: &DensityField, dc: &[f64], radius: f64) -> Vec<f64> {
    if radius <= 1.0 {
        return dc.to_vec();
    }
    let (w, h) = (field.width(), field.height());
    let nb = cone_neighbors(radius);
    let mut out = Vec::with_capacity(dc.len());
    for j in 0..h {
        for i in 0..w {
            let (mut num, mut den) = (0.0, 0.0);
            for &(di, dj, wt) in &nb {
                let (x, y) = (i as isize + di, j as isize + dj);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let k = y as usize * w + x as usize;
                    num += wt * field.values()[k] * dc[k];
                    den += wt;
                }
            }
            out.push(num / (field.at(i, j).max(1e-3) * den));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpOptions {
    pub filter_radius: f64,
    pub move_limit: f64,
    pub min_density: f64,
}

impl Default for SimpOptions {
    fn default() -> Self {
        Self { filter_radius: 1.5, move_limit: 0.2, min_density: 1e-3 }
    }
}

/// Optimality-criteria update with the Lagrange multiplier bisected until the
/// mean density hits `volume_fraction` within 1e-4.
pub fn oc_step(field: &DensityField, dc: &[f64], volume_fraction: f64, opts: &SimpOptions) -> Result<DensityField> {
    let x = field.values();
    let lower: Vec<f64> = x.iter().map(|v| (v - opts.move_limit).max(opts.min_density)).collect();
    let upper: Vec<f64> = x.iter().map(|v| (v + opts.move_limit).min(1.0)).collect();
    let n = x.len() as f64;
    let update = |lambda: f64| -> Vec<f64> {
        x.iter()
            .zip(dc)
            .zip(lower.iter().zip(&upper))
            .map(|((xe, d), (lo, hi))| (xe * ((-d).max(0.0) / lambda).sqrt()).clamp(*lo, *hi))
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;

    // The reachable volume range is [mean(lower), mean(upper)].
    let (vmin, vmax) = (mean(&lower), mean(&upper));
    if volume_fraction < vmin - 1e-4 || volume_fraction > vmax + 1e-4 {
        return Err(Error::BisectionFailed { lo: vmin, hi: vmax });
    }
    let mut lo = 1e-30f64;
    let mut hi = 1.0f64;
    // Grow the upper bound until the update undershoots the target volume.
    while mean(&update(hi)) > volume_fraction {
        hi *= 10.0;
        if hi > 1e300 {
            return Err(Error::BisectionFailed { lo, hi });
        }
    }
    if mean(&update(lo)) < volume_fraction - 1e-4 {
        return Err(Error::BisectionFailed { lo, hi });
    }
    let mut best = update(hi);
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let cand = update(mid);
        let m = mean(&cand);
        best = cand;
        if (m - volume_fraction).abs() <= 1e-7 || hi / lo - 1.0 < 1e-13 {
            break;
        }
        if m > volume_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (mean(&best) - volume_fraction).abs() > 1e-4 {
        return Err(Error::BisectionFailed { lo, hi });
    }
    DensityField::new(field.width(), field.height(), best)
}

/// One line of optimizer progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub compliance: f64,
    pub volume: f64,
    pub change: f64,
}

impl fmt::Display for IterRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter {:4} compliance {:.6e} volume {:.5} change {:.5}", self.iter, self.compliance, self.volume, self.change)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub field: DensityField,
    pub history: Vec<IterRecord>,
}

/// Volume target clamped to what one move-limited step from `x` can reach,
/// so a warm start far from the target converges over several steps.
fn reachable_volume(x: &DensityField, target: f64, opts: &SimpOptions) -> f64 {
    let n = x.values().len() as f64;
    let vmin = x.values().iter().map(|v| (v - opts.move_limit).max(opts.min_density)).sum::<f64>() / n;
    let vmax = x.values().iter().map(|v| (v + opts.move_limit).min(1.0)).sum::<f64>() / n;
    target.clamp(vmin, vmax)
}

fn run_loop(
    start: DensityField,
    spec: &ProblemSpec,
    model: &FemModel,
    opts: &SimpOptions,
    iters: usize,
    mut observer: impl FnMut(&IterRecord),
) -> Result<OptimizeResult> {
    let mut x = start;
    let mut history = Vec::with_capacity(iters);
    for iter in 1..=iters {
        let res = solve(&x, spec, model)?;
        let dc = sensitivity(&x, model, &res);
        let dc = sensitivity_filter(&x, &dc, opts.filter_radius);
        let next = oc_step(&x, &dc, reachable_volume(&x, spec.volume_fraction, opts), opts)?;
        let change = x.values().iter().zip(next.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rec = IterRecord { iter, compliance: res.compliance, volume: x.mean(), change };
        observer(&rec);
        history.push(rec);
        x = next;
    }
    Ok(OptimizeResult { field: x, history })
}

/// SIMP from a uniform field at the target volume fraction.
pub fn optimize(
    spec: &ProblemSpec,
    model: &FemModel,
    opts: &SimpOptions,
    nelx: usize,
    nely: usize,
    iters: usize,
    observer: impl FnMut(&IterRecord),
) -> Result<OptimizeResult> {
    if iters == 0 {
        return Err(Error::InvalidRequest("optimize needs at least one iteration".into()));
    }
    spec.validate()?;
    let start = DensityField::new(nelx, nely, vec![spec.volume_fraction; nelx * nely])?;
    run_loop(start, spec, model, opts, iters, observer)
}

/// Warm-started SIMP: exactly `k_steps` OC iterations from `start`.
pub fn refine(start: &DensityField, spec: &ProblemSpec, model: &FemModel, opts: &SimpOptions, k_steps: usize) -> Result<DensityField> {
    if k_steps == 0 {
        return Ok(start.clone());
    }
    Ok(run_loop(start.clone(), spec, model, opts, k_steps, |_| {})?.field)
}
