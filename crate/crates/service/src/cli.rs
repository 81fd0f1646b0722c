//! `topoedit` command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use topoedit::diffusion::{train, Denoiser, TrainConfig};
use topoedit::edit::{select_best, CandidateSet, EditConfig, EditRequest, Editor, Hole};
use topoedit::eval::corpus::{generate_corpus, load_corpus, save_corpus, training_pairs, CorpusConfig, CorpusItem};
use topoedit::eval::sweep::{point_cloud_csv, records_csv, sweep, table, table_csv, SweepConfig, Topology};
use topoedit::eval::EditKind;
use topoedit::fem::{optimize, FemModel, SimpOptions};
use topoedit::io::{load_field, load_json, save_field, save_field_pgm, save_json};
use topoedit::morphology::{LatticeKind, LatticeSpec};
use topoedit::warp::{Handle, WarpSpec};
use topoedit::{DensityField, ProblemSpec};

use crate::api::{self, AppState, LoadedModel};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "topoedit", version, about = "Post-optimization editing of SIMP topologies with a diffusion prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run SIMP from a uniform start.
    Optimize {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 60)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        nelx: usize,
        #[arg(long, default_value_t = 32)]
        nely: usize,
    },
    /// Generate a corpus of optimized designs on random problems.
    GenCorpus {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 60)]
        iters: usize,
    },
    /// Train the denoiser on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// TrainConfig JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Edit one design.
    Edit {
        #[command(subcommand)]
        kind: EditCommand,
    },
    /// Run an edit sweep over a corpus and write its report.
    Sweep {
        kind: KindArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// SweepConfig JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "topoedit-store")]
        store: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Warp,
    Lattice,
    Nodesign,
}

impl From<KindArg> for EditKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Warp => EditKind::Warp,
            KindArg::Lattice => EditKind::Lattice,
            KindArg::Nodesign => EditKind::Nodesign,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LatticeArg {
    Grid,
    Cross,
}

#[derive(Debug, Args)]
pub struct EditCommon {
    /// Corpus design document holding both field and spec.
    #[arg(long, conflicts_with_all = ["field", "spec"])]
    design: Option<PathBuf>,
    #[arg(long, requires = "spec")]
    field: Option<PathBuf>,
    #[arg(long, requires = "field")]
    spec: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    refine: Option<usize>,
    /// Total DDIM steps.
    #[arg(long)]
    total_steps: Option<usize>,
    /// Partial noising level.
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum EditCommand {
    Warp {
        /// Handle position `X,Y`; repeat for several handles.
        #[arg(long, value_parser = parse_pair, required = true)]
        handle: Vec<[f64; 2]>,
        /// Drag vector `DX,DY`, one per handle.
        #[arg(long, value_parser = parse_pair, required = true, allow_hyphen_values = true)]
        delta: Vec<[f64; 2]>,
        /// Influence radius, one value or one per handle.
        #[arg(long, required = true)]
        sigma: Vec<f64>,
        #[command(flatten)]
        common: EditCommon,
    },
    Lattice {
        #[arg(long, value_enum, default_value_t = LatticeArg::Grid)]
        lattice: LatticeArg,
        #[arg(long, default_value_t = 8)]
        pitch: usize,
        #[arg(long, default_value_t = 2.0)]
        member: f64,
        #[arg(long, default_value_t = 2.0)]
        shell: f64,
        #[command(flatten)]
        common: EditCommon,
    },
    Nodesign {
        #[arg(long, value_parser = parse_pair)]
        center: [f64; 2],
        #[arg(long)]
        radius: f64,
        #[command(flatten)]
        common: EditCommon,
    },
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `A,B`, got `{s}`"));
    }
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

/// Machine-parseable failure: printed as one JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl From<topoedit::Error> for CliError {
    fn from(e: topoedit::Error) -> Self {
        Self { code: e.code().into(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: "io".into(), message: e.to_string() }
    }
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }

    pub fn to_line(&self) -> String {
        json!({"code": self.code, "message": self.message}).to_string()
    }
}

type CliResult = Result<(), CliError>;

fn load_model(path: &Path) -> Result<Denoiser, CliError> {
    Ok(Denoiser::load(path)?)
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Optimize { spec, iters, out, nelx, nely } => {
            let spec: ProblemSpec = load_json(&spec)?;
            let res = optimize(&spec, &FemModel::default(), &SimpOptions::default(), nelx, nely, iters, |r| println!("{r}"))?;
            save_field(&out, &res.field)?;
            Ok(())
        }
        Command::GenCorpus { n, seed, out, width, height, iters } => {
            let cfg = CorpusConfig { width, height, iterations: iters, ..CorpusConfig::default() };
            let (items, manifest) = generate_corpus(n, seed, &cfg, &FemModel::default(), &SimpOptions::default(), |it| {
                println!("{} {} compliance {:.6e}", it.id, it.support_config, it.compliance)
            })?;
            save_corpus(&out, &items, &manifest)?;
            println!(
                "{} designs, {} rejected draws, {} support configurations",
                items.len(),
                manifest.rejected.len(),
                manifest.distinct_support_configs()
            );
            Ok(())
        }
        Command::Train { corpus, steps, out, config, batch, lr, seed, init } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => load_json(p)?,
                None => TrainConfig::default(),
            };
            cfg.steps = steps;
            cfg.batch = batch.unwrap_or(cfg.batch);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let init = init.as_deref().map(load_model).transpose()?;
            let (items, _) = load_corpus(&corpus)?;
            let (model, report) = train(&training_pairs(&items), &cfg, init, |l| println!("{l}"))?;
            model.save(&out)?;
            println!("loss {:.6} -> {:.6}; weights {}", report.initial_loss, report.final_loss, model.weights_hash());
            Ok(())
        }
        Command::Edit { kind } => run_edit(kind),
        Command::Sweep { kind, corpus, model, report, config, limit, samples, seed } => {
            let kind = EditKind::from(kind);
            let mut cfg = match config {
                Some(p) => load_json(p)?,
                None => SweepConfig::for_kind(kind),
            };
            cfg.edit.num_samples = samples.unwrap_or(cfg.edit.num_samples);
            cfg.edit.seed = seed.unwrap_or(cfg.edit.seed);
            let (items, _) = load_corpus(&corpus)?;
            let topologies: Vec<Topology> = items
                .into_iter()
                .take(limit.unwrap_or(usize::MAX))
                .map(|it| Topology { id: it.id, field: it.field, spec: it.spec })
                .collect();
            let denoiser = load_model(&model)?;
            let editor = Editor::new(&denoiser);
            let rep = sweep(kind, &editor, &topologies, &cfg, &denoiser.weights_hash(), |o| {
                let best = o.best_record(cfg.edit.num_samples, cfg.edit.refine_steps);
                println!("{} best {:?}", o.edit_id, best.map(|r| (r.compliance, r.ce, r.de)));
            })?;
            save_json(&report, &rep)?;
            let rows = table(&rep);
            std::fs::write(report.with_extension("csv"), table_csv(&rows))?;
            let all: Vec<_> = rep.edits.iter().flat_map(|e| std::iter::once(&e.direct).chain(&e.candidates)).flat_map(|c| c.records.iter().cloned()).collect();
            std::fs::write(report.with_extension("records.csv"), records_csv(&all))?;
            if kind == EditKind::Warp {
                std::fs::write(report.with_extension("points.csv"), point_cloud_csv(&rep))?;
            }
            print!("{}", table_csv(&rows));
            Ok(())
        }
        Command::Serve { port, host, model, store, corpus, workers } => {
            let addr: std::net::SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| CliError::new("invalid_request", format!("bad address: {e}")))?;
            let loaded = LoadedModel::from_denoiser(load_model(&model)?, Some(model.display().to_string()));
            let state = Arc::new(AppState::new(Store::open(store)?, loaded, corpus, workers));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(addr, state))?;
            Ok(())
        }
    }
}

fn load_design(c: &EditCommon) -> Result<(DensityField, ProblemSpec), CliError> {
    match (&c.design, &c.field, &c.spec) {
        (Some(d), _, _) => {
            let item: CorpusItem = load_json(d)?;
            Ok((item.field, item.spec))
        }
        (None, Some(f), Some(s)) => Ok((load_field(f)?, load_json(s)?)),
        _ => Err(CliError::new("invalid_request", "pass --design, or --field with --spec")),
    }
}

fn run_edit(kind: EditCommand) -> CliResult {
    let (request, common) = match kind {
        EditCommand::Warp { handle, delta, sigma, common } => {
            if delta.len() != handle.len() || !(sigma.len() == 1 || sigma.len() == handle.len()) {
                return Err(CliError::new("invalid_request", "need one --delta per --handle and one --sigma or one per handle"));
            }
            let handles = handle
                .iter()
                .zip(&delta)
                .enumerate()
                .map(|(k, (h, d))| Handle { x: h[0], y: h[1], dx: d[0], dy: d[1], sigma: sigma[k.min(sigma.len() - 1)] })
                .collect();
            (EditRequest::Warp { warp: WarpSpec::new(handles)? }, common)
        }
        EditCommand::Lattice { lattice, pitch, member, shell, common } => {
            let kind = match lattice {
                LatticeArg::Grid => LatticeKind::Grid,
                LatticeArg::Cross => LatticeKind::Cross,
            };
            (EditRequest::Lattice { lattice: LatticeSpec { kind, pitch, member }, t_shell: shell }, common)
        }
        EditCommand::Nodesign { center, radius, common } => (EditRequest::Nodesign { hole: Hole { center, radius } }, common),
    };
    let (field, spec) = load_design(&common)?;
    let mut cfg = EditConfig::for_request(&request);
    cfg.seed = common.seed;
    cfg.num_samples = common.samples.unwrap_or(cfg.num_samples);
    cfg.refine_steps = common.refine.unwrap_or(cfg.refine_steps);
    cfg.total_steps = common.total_steps.unwrap_or(cfg.total_steps);
    cfg.partial_steps = common.tau.unwrap_or(cfg.partial_steps);
    cfg.guidance_scale = common.scale.unwrap_or(cfg.guidance_scale);
    let denoiser = load_model(&common.model)?;
    let set = Editor::new(&denoiser).run(&field, &spec, &request, &cfg)?;
    write_edit(&common.out, &set)
}

/// Writes the candidate set, a record table and one PGM per candidate stage.
pub fn write_edit(out: &Path, set: &CandidateSet) -> CliResult {
    std::fs::create_dir_all(out)?;
    save_json(out.join("result.json"), set)?;
    let mut records = Vec::new();
    for (name, c) in std::iter::once(("direct".to_string(), &set.direct)).chain(set.candidates.iter().map(|c| (format!("candidate_{}", c.index), c))) {
        if let Some(e) = &c.error {
            println!("{name} failed: {e}");
        }
        for s in &c.stages {
            save_field_pgm(out.join(format!("{name}_k{}.pgm", s.record.refine_steps)), &s.field)?;
            println!(
                "{name} k={} compliance {:.6e} ce {:.2} de {} vf {:.4}",
                s.record.refine_steps,
                s.record.compliance,
                s.record.ce,
                s.record.de.map(|d| format!("{d:.2}")).unwrap_or_else(|| "-".into()),
                s.record.vf
            );
            records.push(s.record.clone());
        }
    }
    std::fs::write(out.join("records.csv"), records_csv(&records))?;
    let best = select_best(set);
    save_json(out.join("best.json"), &json!({"best_index": best}))?;
    println!("best candidate: {}", best.map(|b| b.to_string()).unwrap_or_else(|| "none".into()));
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn pairs_parse() {
        assert_eq!(parse_pair("0.5,-0.25").unwrap(), [0.5, -0.25]);
        assert!(parse_pair("1").is_err());
        assert!(parse_pair("a,b").is_err());
    }

    #[test]
    fn unknown_flag_is_rejected() {
        let err = Cli::try_parse_from(["topoedit", "optimize", "--bogus"]).unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::UnknownArgument);
    }

    #[test]
    fn warp_flags_parse() {
        let cli = Cli::try_parse_from([
            "topoedit", "edit", "warp", "--handle", "0.5,0.5", "--delta", "-0.1,0", "--sigma", "0.1", "--design", "d.json", "--model",
            "m.ckpt", "--out", "o",
        ])
        .unwrap();
        match cli.command {
            Command::Edit { kind: EditCommand::Warp { delta, .. } } => assert_eq!(delta, vec![[-0.1, 0.0]]),
            other => panic!("{other:?}"),
        }
    }
}
