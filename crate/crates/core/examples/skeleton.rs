//! Medial axis, junctions and member thickness of an optimized cantilever.
//!
//! cargo run --release --example skeleton

use topoedit::fem::{optimize, FemModel, SimpOptions};
use topoedit::io::{save_field_pgm, save_mask_pgm};
use topoedit::morphology::{max_member_thickness, skeletonize};
use topoedit::ProblemSpec;

fn main() -> topoedit::Result<()> {
    let spec = ProblemSpec::cantilever(64, 32, 0.3);
    let res = optimize(&spec, &FemModel::default(), &SimpOptions::default(), 64, 32, 60, |_| {})?;
    let sk = skeletonize(&res.field);
    println!("thickest member: {:.1} elements", max_member_thickness(&res.field));
    println!("{} joints:", sk.joints.len());
    for j in &sk.joints {
        println!("  ({:.3}, {:.3})", j[0], j[1]);
    }
    save_field_pgm("cantilever.pgm", &res.field)?;
    save_mask_pgm("cantilever_skeleton.pgm", &sk.mask)?;
    println!("wrote cantilever.pgm and cantilever_skeleton.pgm");
    Ok(())
}
