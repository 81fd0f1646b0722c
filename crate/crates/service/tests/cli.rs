use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use topoedit::diffusion::unet::UNetConfig;
use topoedit::diffusion::TrainConfig;
use topoedit::edit::CandidateSet;
use topoedit::eval::corpus::{save_corpus, CorpusConfig, CorpusItem, Manifest, ManifestEntry};
use topoedit::eval::metrics::iou;
use topoedit::eval::sweep::SweepReport;
use topoedit::io::{grid_hash, load_json, save_json};
use topoedit::{DensityField, Grid, ProblemSpec};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topoedit")).args(args).output().unwrap()
}

fn temp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("topoedit-cli-{tag}-{}", uuid::Uuid::new_v4()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Horizontal and vertical bar crossing at the domain center, 32×16.
fn cross() -> (DensityField, ProblemSpec) {
    let g = Grid::from_fn(32, 16, |i, j| if (6..10).contains(&j) || (14..18).contains(&i) { 1.0 } else { 0.0 });
    let f = DensityField::try_from(g).unwrap();
    let vf = f.mean();
    (f, ProblemSpec::cantilever(32, 16, vf))
}

fn write_cross_corpus(dir: &Path) {
    let (field, spec) = cross();
    let hash = grid_hash(field.grid());
    let item = CorpusItem {
        id: "d00000".into(),
        draw: 0,
        support_config: "edge:left".into(),
        spec: spec.clone(),
        field,
        compliance: 1.0,
        final_change: 0.0,
        hash: hash.clone(),
    };
    let manifest = Manifest {
        seed: 0,
        config: CorpusConfig { width: 32, height: 16, ..CorpusConfig::default() },
        rejected: vec![],
        items: vec![ManifestEntry {
            id: item.id.clone(),
            draw: 0,
            support_config: item.support_config.clone(),
            volume_fraction: spec.volume_fraction,
            compliance: 1.0,
            hash,
            file: "designs/d00000.json".into(),
        }],
    };
    save_corpus(dir, &[item], &manifest).unwrap();
}

/// A two-step checkpoint of a tiny network, trained once through the CLI.
fn tiny_model() -> &'static PathBuf {
    static MODEL: OnceLock<PathBuf> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = temp_dir("model");
        write_cross_corpus(&dir.join("corpus"));
        let cfg = TrainConfig { network: UNetConfig::tiny(), batch: 2, log_every: 1, ..TrainConfig::default() };
        save_json(dir.join("train.json"), &cfg).unwrap();
        let ckpt = dir.join("tiny.ckpt");
        let out = bin(&["train", "--corpus", s(&dir.join("corpus")), "--steps", "2", "--config", s(&dir.join("train.json")), "--out", s(&ckpt)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("weights"));
        ckpt
    })
}

#[test]
fn unknown_flag_exits_nonzero_with_usage() {
    let out = bin(&["optimize", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn optimize_writes_a_field() {
    let dir = temp_dir("optimize");
    save_json(dir.join("spec.json"), &ProblemSpec::mbb(24, 8, 0.5)).unwrap();
    let out = bin(&["optimize", "--spec", s(&dir.join("spec.json")), "--iters", "5", "--nelx", "24", "--nely", "8", "--out", s(&dir.join("f.pgm"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f = topoedit::io::load_field(dir.join("f.pgm")).unwrap();
    assert_eq!((f.width(), f.height()), (24, 8));
}

#[test]
fn failures_print_one_json_line() {
    let dir = temp_dir("errors");
    let (f, spec) = cross();
    save_json(dir.join("f.json"), &f).unwrap();
    save_json(dir.join("s.json"), &spec).unwrap();
    let out = bin(&[
        "edit", "warp", "--handle", "0.5,0.5", "--delta", "0.3,0", "--sigma", "0.1", "--field", s(&dir.join("f.json")), "--spec",
        s(&dir.join("s.json")), "--model", s(tiny_model()), "--out", s(&dir.join("o")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(line["code"], "contraction_bound");

    let out = bin(&["optimize", "--spec", s(&dir.join("missing.json")), "--out", s(&dir.join("x.json"))]);
    let line: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(line["code"], "io");
}

#[test]
fn zero_warp_at_zero_depth_is_identity() {
    let dir = temp_dir("identity");
    let (f, spec) = cross();
    save_json(dir.join("f.json"), &f).unwrap();
    save_json(dir.join("s.json"), &spec).unwrap();
    let o = dir.join("o");
    let out = bin(&[
        "edit", "warp", "--handle", "0.5,0.5", "--delta", "0,0", "--sigma", "0.1", "--tau", "0", "--refine", "0", "--samples", "1",
        "--field", s(&dir.join("f.json")), "--spec", s(&dir.join("s.json")), "--model", s(tiny_model()), "--out", s(&o),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let set: CandidateSet = load_json(o.join("result.json")).unwrap();
    assert_eq!(iou(&set.candidates[0].stages[0].field, &f), 1.0);
    assert!(o.join("candidate_0_k0.pgm").exists());
    assert!(o.join("records.csv").exists());
}

#[test]
fn gen_corpus_writes_manifest_and_designs() {
    let dir = temp_dir("gen");
    let out = bin(&["gen-corpus", "--n", "2", "--seed", "3", "--width", "24", "--height", "12", "--iters", "10", "--out", s(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (items, manifest) = topoedit::eval::corpus::load_corpus(&dir).unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(manifest.seed, 3);
}

#[test]
fn warp_sweep_covers_every_direction() {
    let dir = temp_dir("sweep");
    write_cross_corpus(&dir.join("corpus"));
    let report = dir.join("warp.json");
    let out = bin(&[
        "sweep", "warp", "--corpus", s(&dir.join("corpus")), "--model", s(tiny_model()), "--report", s(&report), "--samples", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: SweepReport = load_json(&report).unwrap();
    assert_eq!(rep.edits.len(), 8);
    assert!(rep.edits.iter().all(|e| e.candidates.len() == 2));
    for ext in ["csv", "records.csv", "points.csv"] {
        assert!(report.with_extension(ext).exists(), "{ext}");
    }
}
