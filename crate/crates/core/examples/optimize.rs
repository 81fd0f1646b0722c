//! SIMP compliance minimization on the MBB half-beam.
//!
//! cargo run --release --example optimize -- [NELX NELY VF ITERS] [OUT.pgm]

use topoedit::fem::{optimize, FemModel, SimpOptions};
use topoedit::io::save_field_pgm;
use topoedit::ProblemSpec;

fn main() -> topoedit::Result<()> {
    let a: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| a.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (nelx, nely, vf, iters) = (num(0, 60.0) as usize, num(1, 20.0) as usize, num(2, 0.5), num(3, 60.0) as usize);
    let out = a.get(4).cloned().unwrap_or_else(|| "mbb.pgm".into());
    let spec = ProblemSpec::mbb(nelx, nely, vf);
    let res = optimize(&spec, &FemModel::default(), &SimpOptions::default(), nelx, nely, iters, |r| {
        if r.iter % 10 == 0 {
            println!("{r}");
        }
    })?;
    let last = res.history.last().expect("at least one iteration");
    println!("final compliance {:.4}, volume {:.4}", last.compliance, last.volume);
    save_field_pgm(&out, &res.field)?;
    println!("wrote {out}");
    Ok(())
}
