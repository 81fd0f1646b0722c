//! Shell-and-lattice infill and a no-design hole applied in density space.
//!
//! cargo run --release --example infill

use topoedit::edit::{direct_edit, EditRequest, Hole};
use topoedit::fem::{compliance, optimize, FemModel, SimpOptions};
use topoedit::io::save_field_pgm;
use topoedit::morphology::{LatticeKind, LatticeSpec};
use topoedit::warp::PointWarpOptions;
use topoedit::ProblemSpec;

fn main() -> topoedit::Result<()> {
    let spec = ProblemSpec::mbb(64, 32, 0.5);
    let fem = FemModel::default();
    let base = optimize(&spec, &fem, &SimpOptions::default(), 64, 32, 60, |_| {})?.field;
    println!("base: vf {:.3}, compliance {:.3}", base.mean(), compliance(&base, &spec, &fem)?);
    let opts = PointWarpOptions::default();

    let lattice = EditRequest::Lattice { lattice: LatticeSpec { kind: LatticeKind::Cross, pitch: 8, member: 2.0 }, t_shell: 2.0 };
    let (lat, lat_spec) = direct_edit(&base, &spec, &lattice, &opts)?;
    println!("lattice: vf {:.3}, compliance {:.3}", lat.mean(), compliance(&lat, &lat_spec, &fem)?);

    let hole = EditRequest::Nodesign { hole: Hole { center: [0.5, 0.5], radius: 0.12 } };
    let (holed, _) = direct_edit(&base, &spec, &hole, &opts)?;
    println!("hole: vf {:.3}, compliance {:.3}", holed.mean(), compliance(&holed, &spec, &fem)?);

    save_field_pgm("base.pgm", &base)?;
    save_field_pgm("lattice.pgm", &lat)?;
    save_field_pgm("hole.pgm", &holed)?;
    Ok(())
}
