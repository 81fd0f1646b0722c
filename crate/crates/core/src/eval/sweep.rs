//! Edit sweeps over sets of topologies and the best-of-N report tables
//! computed from their persisted records.

use serde::{Deserialize, Serialize};

use crate::edit::{select_best_records, CandidateSet, EditConfig, EditRecord, EditRequest, Editor, Hole, SelectionKey};
use crate::error::Result;
use crate::eval::metrics::EditKind;
use crate::field::DensityField;
use crate::morphology::{max_member_thickness, skeletonize, LatticeKind, LatticeSpec};
use crate::problem::ProblemSpec;
use crate::warp::WarpSpec;

/// A design and its problem, as fed to a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub id: String,
    pub field: DensityField,
    pub spec: ProblemSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub edit: EditConfig,
    /// Warp drag length, normalized units.
    pub drag: f64,
    pub sigma: f64,
    pub directions: usize,
    /// Warp topologies thicker than this (pixels) are skipped.
    pub max_thickness: f64,
    /// Lattice topologies whose thickest member is at most this (pixels) are skipped.
    pub min_interior: f64,
    pub lattice: LatticeSpec,
    pub t_shell: f64,
    pub hole_radius: f64,
    /// Joints edited per topology.
    pub joints_per_topology: usize,
    /// Joints closer than this to a support or load are not used as hole centers.
    pub bc_clearance: f64,
}

impl SweepConfig {
    pub fn for_kind(kind: EditKind) -> Self {
        let edit = match kind {
            EditKind::Warp => EditConfig::warp(),
            EditKind::Lattice => EditConfig::lattice(),
            EditKind::Nodesign => EditConfig::nodesign(),
        };
        Self { edit, ..Self::default() }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            edit: EditConfig::warp(),
            drag: 0.12,
            sigma: 0.10,
            directions: 8,
            max_thickness: 10.0,
            min_interior: 20.0,
            lattice: LatticeSpec { kind: LatticeKind::Grid, pitch: 8, member: 2.0 },
            t_shell: 2.0,
            hole_radius: 0.08,
            joints_per_topology: 1,
            bc_clearance: 0.1,
        }
    }
}

/// Records of one candidate across its refinement stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecords {
    pub index: usize,
    pub records: Vec<EditRecord>,
    pub error: Option<String>,
}

/// Every record of one edit; reports are computed from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub edit_id: String,
    pub topology: String,
    pub request: EditRequest,
    pub direct: CandidateRecords,
    pub candidates: Vec<CandidateRecords>,
}

impl EditOutcome {
    pub fn from_set(edit_id: String, topology: String, set: &CandidateSet) -> Self {
        let conv = |c: &crate::edit::Candidate| CandidateRecords {
            index: c.index,
            records: c.stages.iter().map(|s| s.record.clone()).collect(),
            error: c.error.clone(),
        };
        Self { edit_id, topology, request: set.request.clone(), direct: conv(&set.direct), candidates: set.candidates.iter().map(conv).collect() }
    }

    /// Index of the best of the first `n` candidates at a refinement stage.
    pub fn best_of(&self, n: usize, stage: usize) -> Option<usize> {
        select_best_records(self.candidates.iter().take(n).filter_map(|c| stage_record(c, stage).map(|r| (c.index, r))))
    }

    pub fn best_record(&self, n: usize, stage: usize) -> Option<&EditRecord> {
        self.best_of(n, stage).and_then(|i| stage_record(&self.candidates[i], stage))
    }

    pub fn direct_record(&self, stage: usize) -> Option<&EditRecord> {
        stage_record(&self.direct, stage)
    }
}

fn stage_record(c: &CandidateRecords, stage: usize) -> Option<&EditRecord> {
    c.records.iter().find(|r| r.refine_steps == stage)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub topology: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: EditKind,
    pub config: SweepConfig,
    pub model: String,
    pub edits: Vec<EditOutcome>,
    pub skipped: Vec<Skipped>,
}

fn near_any(p: [f64; 2], spec: &ProblemSpec, r: f64) -> bool {
    spec.supports.iter().map(|s| [s.x, s.y]).chain(spec.loads.iter().map(|l| [l.x, l.y])).any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < r)
}

/// Joints usable as edit sites, nearest to the domain center first.
fn candidate_joints(field: &DensityField, keep: impl Fn([f64; 2]) -> bool) -> Vec<[f64; 2]> {
    let mut js: Vec<[f64; 2]> = skeletonize(field).joints.into_iter().filter(|j| keep(*j)).collect();
    let d = |j: &[f64; 2]| (j[0] - 0.5).hypot(j[1] - 0.5);
    js.sort_by(|a, b| d(a).total_cmp(&d(b)).then(a[0].total_cmp(&b[0])).then(a[1].total_cmp(&b[1])));
    js
}

/// Edit requests a sweep issues for one topology, or the reason it is skipped.
pub fn plan_requests(kind: EditKind, topo: &Topology, cfg: &SweepConfig) -> std::result::Result<Vec<(String, EditRequest)>, String> {
    match kind {
        EditKind::Warp => {
            let th = max_member_thickness(&topo.field);
            if th > cfg.max_thickness {
                return Err(format!("thickness {th:.1} exceeds {}", cfg.max_thickness));
            }
            let m = cfg.drag;
            let joints = candidate_joints(&topo.field, |j| (m..=1.0 - m).contains(&j[0]) && (m..=1.0 - m).contains(&j[1]));
            if joints.is_empty() {
                return Err("no joint with room for the drag".into());
            }
            let mut out = Vec::new();
            for (ji, j) in joints.iter().take(cfg.joints_per_topology).enumerate() {
                for d in 0..cfg.directions {
                    let a = std::f64::consts::TAU * d as f64 / cfg.directions as f64;
                    let w = WarpSpec::single(j[0], j[1], cfg.drag * a.cos(), cfg.drag * a.sin(), cfg.sigma).map_err(|e| e.to_string())?;
                    out.push((format!("{}-j{ji}-d{d}", topo.id), EditRequest::Warp { warp: w }));
                }
            }
            Ok(out)
        }
        EditKind::Lattice => {
            let th = max_member_thickness(&topo.field);
            if th <= cfg.min_interior {
                return Err(format!("thickness {th:.1} does not exceed {}", cfg.min_interior));
            }
            Ok(vec![(format!("{}-lat", topo.id), EditRequest::Lattice { lattice: cfg.lattice, t_shell: cfg.t_shell })])
        }
        EditKind::Nodesign => {
            let joints = candidate_joints(&topo.field, |j| !near_any(j, &topo.spec, cfg.bc_clearance.max(cfg.hole_radius)));
            if joints.is_empty() {
                return Err("no joint clear of the boundary conditions".into());
            }
            Ok(joints
                .iter()
                .take(cfg.joints_per_topology)
                .enumerate()
                .map(|(ji, j)| (format!("{}-j{ji}-hole", topo.id), EditRequest::Nodesign { hole: Hole { center: *j, radius: cfg.hole_radius } }))
                .collect())
        }
    }
}

/// Runs every planned edit in a fixed order. Each edit gets its own seed,
/// `cfg.edit.seed + edit index`.
pub fn sweep(
    kind: EditKind,
    editor: &Editor,
    topologies: &[Topology],
    cfg: &SweepConfig,
    model: &str,
    mut on_edit: impl FnMut(&EditOutcome),
) -> Result<SweepReport> {
    cfg.edit.validate()?;
    let mut edits = Vec::new();
    let mut skipped = Vec::new();
    for topo in topologies {
        let reqs = match plan_requests(kind, topo, cfg) {
            Ok(r) => r,
            Err(reason) => {
                skipped.push(Skipped { topology: topo.id.clone(), reason });
                continue;
            }
        };
        for (edit_id, req) in reqs {
            let ecfg = EditConfig { seed: cfg.edit.seed.wrapping_add(edits.len() as u64), ..cfg.edit.clone() };
            match editor.run(&topo.field, &topo.spec, &req, &ecfg) {
                Ok(set) => {
                    let o = EditOutcome::from_set(edit_id, topo.id.clone(), &set);
                    on_edit(&o);
                    edits.push(o);
                }
                Err(e) => skipped.push(Skipped { topology: topo.id.clone(), reason: format!("{edit_id}: {e}") }),
            }
        }
    }
    Ok(SweepReport { kind, config: cfg.clone(), model: model.to_string(), edits, skipped })
}

pub fn sweep_warp(editor: &Editor, topologies: &[Topology], cfg: &SweepConfig, model: &str, on_edit: impl FnMut(&EditOutcome)) -> Result<SweepReport> {
    sweep(EditKind::Warp, editor, topologies, cfg, model, on_edit)
}

pub fn sweep_lattice(editor: &Editor, topologies: &[Topology], cfg: &SweepConfig, model: &str, on_edit: impl FnMut(&EditOutcome)) -> Result<SweepReport> {
    sweep(EditKind::Lattice, editor, topologies, cfg, model, on_edit)
}

pub fn sweep_nodesign(editor: &Editor, topologies: &[Topology], cfg: &SweepConfig, model: &str, on_edit: impl FnMut(&EditOutcome)) -> Result<SweepReport> {
    sweep(EditKind::Nodesign, editor, topologies, cfg, model, on_edit)
}

/// `1, 2, 4, …` up to and including `n`.
pub fn best_of_ladder(n: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut k = 1;
    while k < n {
        v.push(k);
        k *= 2;
    }
    v.push(n.max(1));
    v
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// One table row: a pipeline, a best-of-N count (0 for direct) and a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub pipeline: String,
    pub best_of: usize,
    pub refine_steps: usize,
    pub edits: usize,
    /// Edits without any successful candidate.
    pub missing: usize,
    pub failure_rate: f64,
    pub ce: Option<f64>,
    pub de: Option<f64>,
    pub vfe: Option<f64>,
    pub iou: Option<f64>,
    pub violation: Option<f64>,
    pub beat_rate: Option<f64>,
}

fn row(pipeline: &str, best_of: usize, stage: usize, picks: &[(Option<&EditRecord>, Option<&EditRecord>)]) -> TableRow {
    let got: Vec<&EditRecord> = picks.iter().filter_map(|p| p.0).collect();
    let failed = picks.iter().filter(|p| p.0.map_or(true, |r| r.failed)).count();
    let n = picks.len().max(1) as f64;
    let ok: Vec<&EditRecord> = got.iter().copied().filter(|r| !r.failed).collect();
    let beats: Vec<bool> = picks
        .iter()
        .filter_map(|(r, d)| Some(r.as_ref()?.compliance < d.as_ref()?.compliance))
        .collect();
    TableRow {
        pipeline: pipeline.into(),
        best_of,
        refine_steps: stage,
        edits: picks.len(),
        missing: picks.len() - got.len(),
        failure_rate: 100.0 * failed as f64 / n,
        ce: mean(ok.iter().map(|r| r.ce)),
        de: mean(ok.iter().filter_map(|r| r.de)),
        vfe: mean(got.iter().map(|r| r.vfe)),
        iou: mean(got.iter().filter_map(|r| r.iou)),
        violation: mean(got.iter().filter_map(|r| r.violation)),
        beat_rate: (best_of > 0 && !beats.is_empty()).then(|| 100.0 * beats.iter().filter(|b| **b).count() as f64 / beats.len() as f64),
    }
}

/// Direct rows then best-of-N latent rows for every refinement stage.
/// CE and DE average over non-failed edits; rates and the rest over all.
pub fn table(report: &SweepReport) -> Vec<TableRow> {
    let stages = crate::edit::stage_steps(report.config.edit.refine_steps);
    let mut rows = Vec::new();
    for &s in &stages {
        let picks: Vec<_> = report.edits.iter().map(|e| (e.direct_record(s), None)).collect();
        rows.push(row("direct", 0, s, &picks));
    }
    for &s in &stages {
        for n in best_of_ladder(report.config.edit.num_samples) {
            let picks: Vec<_> = report.edits.iter().map(|e| (e.best_record(n, s), e.direct_record(s))).collect();
            rows.push(row("latent", n, s, &picks));
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("pipeline,best_of,refine_steps,edits,missing,failure_rate,ce,de,vfe,iou,violation,beat_rate\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{:.4},{},{},{},{},{},{}\n",
            r.pipeline,
            r.best_of,
            r.refine_steps,
            r.edits,
            r.missing,
            r.failure_rate,
            opt(r.ce),
            opt(r.de),
            opt(r.vfe),
            opt(r.iou),
            opt(r.violation),
            opt(r.beat_rate)
        );
    }
    s
}

/// Flat table of edit records.
pub fn records_csv(records: &[EditRecord]) -> String {
    let mut s = String::from(
        "kind,pipeline,candidate,seed,total_steps,partial_steps,guidance_scale,refine_steps,compliance,original_compliance,ce,de,de_capped,vf,vf_target,vfe,iou,violation,failed\n",
    );
    for r in records {
        s += &format!(
            "{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.4},{},{},{:.5},{:.5},{:.4},{},{},{}\n",
            r.kind,
            r.pipeline,
            r.candidate,
            r.seed,
            r.total_steps,
            r.partial_steps,
            r.guidance_scale,
            r.refine_steps,
            r.compliance,
            r.original_compliance,
            r.ce,
            opt(r.de),
            r.de_capped,
            r.vf,
            r.vf_target,
            r.vfe,
            opt(r.iou),
            opt(r.violation),
            r.failed
        );
    }
    s
}

/// Every (CE, DE) pair of a warp sweep, one line per candidate and stage.
pub fn point_cloud_csv(report: &SweepReport) -> String {
    let mut s = String::from("edit_id,pipeline,candidate,refine_steps,ce,de,failed\n");
    for e in &report.edits {
        for c in std::iter::once(&e.direct).chain(&e.candidates) {
            for r in &c.records {
                let pipeline = if std::ptr::eq(c, &e.direct) { "direct" } else { "latent" };
                s += &format!("{},{},{},{},{:.6},{},{}\n", e.edit_id, pipeline, c.index, r.refine_steps, r.ce, opt(r.de), r.failed);
            }
        }
    }
    s
}

/// Every (edit, stage, N, N+1) where the best-of-(N+1) objective exceeds
/// best-of-N. Empty on a well-formed report.
pub fn monotonicity_violations(report: &SweepReport) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for e in &report.edits {
        for s in crate::edit::stage_steps(report.config.edit.refine_steps) {
            let mut prev: Option<SelectionKey> = None;
            for n in 1..=e.candidates.len() {
                let cur = e.best_record(n, s).map(|r| r.selection_key());
                if let (Some(p), Some(c)) = (prev, cur) {
                    if c.cmp(&p) == std::cmp::Ordering::Greater {
                        out.push((e.edit_id.clone(), s, n));
                    }
                }
                if cur.is_some() {
                    prev = cur;
                }
            }
        }
    }
    out
}
