//! Latent-space warp, lattice and no-design edits of one design, compared
//! with the direct density-space edits.
//!
//! cargo run --release --example edit -- MODEL.ckpt

use topoedit::diffusion::Denoiser;
use topoedit::edit::{select_best, EditConfig, EditRequest, Editor, Hole};
use topoedit::fem::{optimize, FemModel, SimpOptions};
use topoedit::morphology::{skeletonize, LatticeKind, LatticeSpec};
use topoedit::warp::WarpSpec;
use topoedit::ProblemSpec;

fn main() -> topoedit::Result<()> {
    let path = std::env::args().nth(1).expect("usage: edit MODEL.ckpt");
    let model = Denoiser::load(path)?;
    let spec = ProblemSpec::cantilever(64, 32, 0.3);
    let field = optimize(&spec, &FemModel::default(), &SimpOptions::default(), 64, 32, 60, |_| {})?.field;
    let center_dist = |p: &[f64; 2]| (p[0] - 0.5).hypot(p[1] - 0.5);
    let j = *skeletonize(&field).joints.iter().min_by(|a, b| center_dist(a).total_cmp(&center_dist(b))).unwrap_or(&[0.5, 0.5]);
    let requests = [
        EditRequest::Warp { warp: WarpSpec::single(j[0], j[1], 0.0, 0.1, 0.1)? },
        EditRequest::Lattice { lattice: LatticeSpec { kind: LatticeKind::Grid, pitch: 8, member: 2.0 }, t_shell: 2.0 },
        EditRequest::Nodesign { hole: Hole { center: j, radius: 0.08 } },
    ];
    let editor = Editor::new(&model);
    for req in &requests {
        let cfg = EditConfig { num_samples: 4, ..EditConfig::for_request(req) };
        let set = editor.run(&field, &spec, req, &cfg)?;
        let show = |name: String, r: &topoedit::edit::EditRecord| {
            println!(
                "  {name:<12} compliance {:.3} ce {:7.2} de {:>7} vf {:.3} violation {:>6}",
                r.compliance,
                r.ce,
                r.de.map(|d| format!("{d:.2}")).unwrap_or_default(),
                r.vf,
                r.violation.map(|v| format!("{v:.2}")).unwrap_or_default()
            )
        };
        println!("{:?} (original compliance {:.3})", req.kind(), set.original_compliance);
        if let Some(s) = set.direct.last() {
            show("direct".into(), &s.record);
        }
        for c in &set.candidates {
            match c.last() {
                Some(s) => show(format!("candidate {}", c.index), &s.record),
                None => println!("  candidate {} failed: {}", c.index, c.error.as_deref().unwrap_or("")),
            }
        }
        println!("  best: {:?}", select_best(&set));
    }
    Ok(())
}
