//! Runs an edit sweep over a saved corpus and prints the best-of-N table.
//!
//! cargo run --release --example sweep -- warp|lattice|nodesign CORPUS_DIR MODEL.ckpt [TOPOLOGIES]

use topoedit::diffusion::Denoiser;
use topoedit::edit::Editor;
use topoedit::eval::corpus::load_corpus;
use topoedit::eval::sweep::{monotonicity_violations, sweep, table, table_csv, SweepConfig, Topology};
use topoedit::eval::EditKind;

fn main() -> topoedit::Result<()> {
    let a: Vec<String> = std::env::args().skip(1).collect();
    if a.len() < 3 {
        eprintln!("usage: sweep warp|lattice|nodesign CORPUS_DIR MODEL.ckpt [TOPOLOGIES]");
        std::process::exit(2);
    }
    let kind = match a[0].as_str() {
        "warp" => EditKind::Warp,
        "lattice" => EditKind::Lattice,
        "nodesign" => EditKind::Nodesign,
        other => panic!("unknown edit kind {other}"),
    };
    let limit: usize = a.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let (items, _) = load_corpus(&a[1])?;
    let model = Denoiser::load(&a[2])?;
    let topologies: Vec<Topology> =
        items.into_iter().take(limit).map(|it| Topology { id: it.id, field: it.field, spec: it.spec }).collect();
    let cfg = SweepConfig::for_kind(kind);
    let rep = sweep(kind, &Editor::new(&model), &topologies, &cfg, &model.weights_hash(), |o| println!("{} done", o.edit_id))?;
    for s in &rep.skipped {
        println!("skipped {}: {}", s.topology, s.reason);
    }
    print!("{}", table_csv(&table(&rep)));
    println!("monotonicity violations: {}", monotonicity_violations(&rep).len());
    Ok(())
}
