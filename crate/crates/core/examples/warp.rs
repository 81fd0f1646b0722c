//! Drag warp of a design: grid resampling, point warping of the boundary
//! conditions and the achieved handle position.
//!
//! cargo run --release --example warp -- [DX DY SIGMA]

use topoedit::fem::{compliance, optimize, FemModel, SimpOptions};
use topoedit::io::save_field_pgm;
use topoedit::morphology::skeletonize;
use topoedit::warp::{achieved_handle, warp_grid, warp_problem, PointWarpOptions, WarpSpec};
use topoedit::{DensityField, ProblemSpec};

fn main() -> topoedit::Result<()> {
    let a: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let (dx, dy, sigma) = (a.first().copied().unwrap_or(0.1), a.get(1).copied().unwrap_or(0.0), a.get(2).copied().unwrap_or(0.1));
    let spec = ProblemSpec::cantilever(64, 32, 0.3);
    let fem = FemModel::default();
    let field = optimize(&spec, &fem, &SimpOptions::default(), 64, 32, 60, |_| {})?.field;
    let center_dist = |p: &[f64; 2]| (p[0] - 0.5).hypot(p[1] - 0.5);
    let joint = *skeletonize(&field).joints.iter().min_by(|a, b| center_dist(a).total_cmp(&center_dist(b))).unwrap_or(&[0.5, 0.5]);
    let w = WarpSpec::single(joint[0], joint[1], dx, dy, sigma)?;
    let opts = PointWarpOptions::default();
    let moved = DensityField::try_from(warp_grid(field.grid(), &w))?;
    let spec2 = warp_problem(&spec, &w, &opts)?;
    let h = achieved_handle(&w, &opts)?[0];
    println!("handle ({:.3}, {:.3}) dragged by ({dx}, {dy}), lands at ({:.3}, {:.3})", joint[0], joint[1], h[0], h[1]);
    println!("compliance {:.3} -> {:.3}", compliance(&field, &spec, &fem)?, compliance(&moved, &spec2, &fem)?);
    save_field_pgm("warp_before.pgm", &field)?;
    save_field_pgm("warp_after.pgm", &moved)?;
    Ok(())
}
