//! Generates a small corpus of optimized designs and trains the denoiser on it.
//!
//! cargo run --release --example train_prior -- [DESIGNS STEPS OUT.ckpt]

use topoedit::diffusion::unet::UNetConfig;
use topoedit::diffusion::{train, TrainConfig};
use topoedit::eval::corpus::{generate_corpus, training_pairs, CorpusConfig};
use topoedit::fem::{FemModel, SimpOptions};

fn main() -> topoedit::Result<()> {
    let a: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = a.first().and_then(|s| s.parse().ok()).unwrap_or(16);
    let steps: usize = a.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = a.get(2).cloned().unwrap_or_else(|| "prior.ckpt".into());
    let cfg = CorpusConfig::default();
    let (items, manifest) = generate_corpus(n, 0, &cfg, &FemModel::default(), &SimpOptions::default(), |it| {
        println!("{} {} compliance {:.3}", it.id, it.support_config, it.compliance)
    })?;
    println!("{} designs over {} support configurations", items.len(), manifest.distinct_support_configs());
    let tc = TrainConfig { steps, log_every: 10, network: UNetConfig { widths: vec![8, 16, 32, 32], ..UNetConfig::default() }, ..TrainConfig::default() };
    let (model, report) = train(&training_pairs(&items), &tc, None, |l| println!("{l}"))?;
    println!("loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);
    model.save(&out)?;
    println!("wrote {out}");
    Ok(())
}
