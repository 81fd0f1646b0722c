//! Randomized problem sampling and SIMP corpus generation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{optimize, FemModel, SimpOptions};
use crate::field::DensityField;
use crate::io::{grid_hash, load_json, save_json};
use crate::problem::{Load, ProblemSpec, Support};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub vf_range: [f64; 2],
    pub max_loads: usize,
    /// Designs whose last OC step moved any density by more than this are
    /// rejected and resampled.
    pub max_final_change: f64,
    /// Loads are kept at least this far (normalized) from every support.
    pub load_clearance: f64,
    /// Attempts allowed per accepted design before giving up.
    pub max_attempts_factor: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 32,
            iterations: 60,
            vf_range: [0.3, 0.6],
            max_loads: 3,
            max_final_change: 0.1,
            load_clearance: 0.25,
            max_attempts_factor: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    /// Stream index the problem was drawn from.
    pub draw: u64,
    pub support_config: String,
    pub spec: ProblemSpec,
    pub field: DensityField,
    pub compliance: f64,
    pub final_change: f64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub draw: u64,
    pub support_config: String,
    pub volume_fraction: f64,
    pub compliance: f64,
    pub hash: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: CorpusConfig,
    pub rejected: Vec<u64>,
    pub items: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn distinct_support_configs(&self) -> usize {
        let mut s: Vec<&str> = self.items.iter().map(|e| e.support_config.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

impl Edge {
    const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Top, Edge::Bottom];

    fn tag(self) -> char {
        match self {
            Edge::Left => 'L',
            Edge::Right => 'R',
            Edge::Top => 'T',
            Edge::Bottom => 'B',
        }
    }

    /// Clamped nodes on the edge between fractions `a` and `b` of its length.
    fn clamp(self, a: f64, b: f64, w: usize, h: usize) -> Vec<Support> {
        let n = match self {
            Edge::Left | Edge::Right => h,
            Edge::Top | Edge::Bottom => w,
        };
        let lo = (a * n as f64).round() as usize;
        let hi = (b * n as f64).round() as usize;
        (lo..=hi)
            .map(|k| {
                let s = k as f64 / n as f64;
                let (x, y) = match self {
                    Edge::Left => (0.0, s),
                    Edge::Right => (1.0, s),
                    Edge::Top => (s, 0.0),
                    Edge::Bottom => (s, 1.0),
                };
                Support { x, y, fix_x: true, fix_y: true }
            })
            .collect()
    }
}

const CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Draws supports, loads and a volume fraction. Supports are one clamped
/// edge segment (eighths of the edge), two fully clamped edges, or two
/// pinned corners; all three families are statically determinate or better.
pub fn sample_problem<R: Rng>(rng: &mut R, cfg: &CorpusConfig) -> (ProblemSpec, String) {
    let (w, h) = (cfg.width, cfg.height);
    let (supports, label) = match rng.gen_range(0..4) {
        0 | 1 => {
            let edge = *Edge::ALL.choose(rng).unwrap();
            let len = rng.gen_range(2..=8);
            let start = rng.gen_range(0..=8 - len);
            let (a, b) = (start as f64 / 8.0, (start + len) as f64 / 8.0);
            (edge.clamp(a, b, w, h), format!("edge:{}{}-{}", edge.tag(), start, start + len))
        }
        2 => {
            let mut pair = Edge::ALL.choose_multiple(rng, 2).copied().collect::<Vec<_>>();
            pair.sort_by_key(|e| e.tag());
            let s = pair.iter().flat_map(|e| e.clamp(0.0, 1.0, w, h)).collect();
            (s, format!("edges:{}{}", pair[0].tag(), pair[1].tag()))
        }
        _ => {
            let mut idx = rand::seq::index::sample(rng, 4, 2).into_vec();
            idx.sort_unstable();
            let s = idx.iter().map(|&k| Support { x: CORNERS[k][0], y: CORNERS[k][1], fix_x: true, fix_y: true }).collect();
            (s, format!("corners:{}{}", idx[0], idx[1]))
        }
    };
    let n_loads = rng.gen_range(1..=cfg.max_loads.max(1));
    let mut loads = Vec::with_capacity(n_loads);
    while loads.len() < n_loads {
        let (x, y): (f64, f64) = (rng.gen(), rng.gen());
        let clear = supports.iter().all(|s: &Support| (s.x - x).hypot(s.y - y) >= cfg.load_clearance);
        if !clear {
            continue;
        }
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        loads.push(Load { x, y, fx: angle.cos(), fy: angle.sin() });
    }
    let vf = rng.gen_range(cfg.vf_range[0]..=cfg.vf_range[1]);
    let spec = ProblemSpec { supports, loads, volume_fraction: vf, aspect: ProblemSpec::aspect_for(w, h), cell_size: 1.0 };
    (spec, label)
}

/// Optimizes the problem drawn from stream `(seed, draw)`. Returns `None`
/// when the design does not meet the acceptance rule.
pub fn generate_item(seed: u64, draw: u64, cfg: &CorpusConfig, model: &FemModel, simp: &SimpOptions) -> Result<Option<CorpusItem>> {
    let mut rng = stream(seed, draw);
    let (spec, label) = sample_problem(&mut rng, cfg);
    let res = optimize(&spec, model, simp, cfg.width, cfg.height, cfg.iterations, |_| {})?;
    let last = res.history.last().expect("at least one iteration");
    let ok = last.compliance.is_finite()
        && last.change <= cfg.max_final_change
        && (res.field.mean() - spec.volume_fraction).abs() <= 0.01;
    if !ok {
        return Ok(None);
    }
    let compliance = crate::fem::compliance(&res.field, &spec, model)?;
    Ok(Some(CorpusItem {
        id: format!("d{draw:05}"),
        draw,
        support_config: label,
        hash: grid_hash(res.field.grid()),
        spec,
        field: res.field,
        compliance,
        final_change: last.change,
    }))
}

/// Draws problems from consecutive streams until `n` designs are accepted.
/// `on_item` sees every accepted design in order.
pub fn generate_corpus(
    n: usize,
    seed: u64,
    cfg: &CorpusConfig,
    model: &FemModel,
    simp: &SimpOptions,
    mut on_item: impl FnMut(&CorpusItem),
) -> Result<(Vec<CorpusItem>, Manifest)> {
    let mut items = Vec::with_capacity(n);
    let mut rejected = Vec::new();
    let max_draws = (n * cfg.max_attempts_factor.max(1)) as u64;
    let mut draw = 0u64;
    while items.len() < n {
        if draw >= max_draws {
            return Err(Error::InvalidRequest(format!(
                "only {} of {n} designs accepted after {draw} draws",
                items.len()
            )));
        }
        // Solver failures on a sampled problem are rejections, not errors.
        match generate_item(seed, draw, cfg, model, simp) {
            Ok(Some(item)) => {
                on_item(&item);
                items.push(item);
            }
            Ok(None) | Err(_) => rejected.push(draw),
        }
        draw += 1;
    }
    let manifest = Manifest {
        seed,
        config: cfg.clone(),
        rejected,
        items: items
            .iter()
            .map(|it| ManifestEntry {
                id: it.id.clone(),
                draw: it.draw,
                support_config: it.support_config.clone(),
                volume_fraction: it.spec.volume_fraction,
                compliance: it.compliance,
                hash: it.hash.clone(),
                file: format!("designs/{}.json", it.id),
            })
            .collect(),
    };
    Ok((items, manifest))
}

/// Designs lifted to the prior's canonical grid, ready for training.
pub fn training_pairs(items: &[CorpusItem]) -> Vec<(DensityField, ProblemSpec)> {
    items.iter().map(|it| (it.field.to_canonical(), it.spec.clone())).collect()
}

/// Writes `manifest.json` and one JSON document per design under `dir`.
pub fn save_corpus(dir: impl AsRef<Path>, items: &[CorpusItem], manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("designs"))?;
    for (it, e) in items.iter().zip(&manifest.items) {
        save_json(dir.join(&e.file), it)?;
    }
    save_json(dir.join("manifest.json"), manifest)
}

/// Loads a corpus written by [`save_corpus`], checking every design hash.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(Vec<CorpusItem>, Manifest)> {
    let dir = dir.as_ref();
    let manifest: Manifest = load_json(dir.join("manifest.json"))?;
    let mut items = Vec::with_capacity(manifest.items.len());
    for e in &manifest.items {
        let it: CorpusItem = load_json(dir.join(&e.file))?;
        if grid_hash(it.field.grid()) != e.hash {
            return Err(Error::parse(e.file.clone(), "design hash does not match the manifest"));
        }
        items.push(it);
    }
    Ok((items, manifest))
}
