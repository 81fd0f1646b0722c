//! Edit operators on optimized designs: latent-space pipelines with guided
//! denoising, the direct density-space baselines, and best-of-N selection.
//!
//! Designs of any size are lifted to the prior's 64×64 grid for sampling and
//! brought back to their own resolution for refinement and every metric.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::diffusion::model::VelocityModel;
use crate::diffusion::sampler::{denoise, warp_weight_map, GuidanceConfig, GuidanceTarget, INFLUENCE_RADIUS, WEIGHT_SHARPNESS};
use crate::diffusion::schedule::{make_schedule, noise};
use crate::error::{Error, Result};
use crate::eval::metrics::{
    classify_failure, compliance_error, nearest_joint_error, violation_ratio, volume_fraction_error, EditKind, iou,
};
use crate::fem::{compliance, refine, FemModel, SimpOptions};
use crate::field::{decode_field, encode_field, DensityField, Latent, Mask, CANONICAL_SIZE};
use crate::morphology::{apply_hole, compose_lattice, hole_mask, infill_mask, lattice_pattern, skeletonize, LatticeSpec};
use crate::problem::ProblemSpec;
use crate::rng::{gaussian_latent, stream};
use crate::warp::{achieved_handle, warp_grid, warp_problem, PointWarpOptions, WarpSpec};

/// Lattice candidates within this absolute volume-fraction distance of the
/// lattice reference count as feasible during selection.
pub const LATTICE_VF_TOLERANCE: f64 = 0.05;
/// No-design candidates at or below this violation percentage count as feasible.
pub const NODESIGN_VIOLATION_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditRequest {
    Warp { warp: WarpSpec },
    Lattice { lattice: LatticeSpec, t_shell: f64 },
    Nodesign { hole: Hole },
    /// Warp and hole applied to the same noised latent in one denoising pass.
    WarpNodesign { warp: WarpSpec, hole: Hole },
}

impl EditRequest {
    /// Metric family used to score the request.
    pub fn kind(&self) -> EditKind {
        match self {
            EditRequest::Warp { .. } | EditRequest::WarpNodesign { .. } => EditKind::Warp,
            EditRequest::Lattice { .. } => EditKind::Lattice,
            EditRequest::Nodesign { .. } => EditKind::Nodesign,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_hole = |h: &Hole| {
            if !(h.radius >= 0.0 && h.radius.is_finite()) || h.center.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidRequest(format!("hole needs a center in [0,1]² and radius >= 0, got {h:?}")));
            }
            Ok(())
        };
        match self {
            EditRequest::Warp { .. } => Ok(()),
            EditRequest::Lattice { lattice, t_shell } => {
                lattice.validate()?;
                if !(*t_shell >= 0.0 && t_shell.is_finite()) {
                    return Err(Error::InvalidRequest(format!("shell thickness must be >= 0, got {t_shell}")));
                }
                Ok(())
            }
            EditRequest::Nodesign { hole } | EditRequest::WarpNodesign { hole, .. } => check_hole(hole),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub total_steps: usize,
    /// Noise level `τ` the edit starts from; 0 skips noising and denoising.
    pub partial_steps: usize,
    pub guidance_scale: f64,
    pub guidance_stride: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub refine_steps: usize,
    /// Radius of the unguided disk around each handle, in handle sigmas.
    pub influence_radius: f64,
    /// Sigmoid width of the warp guidance weight map.
    pub weight_sharpness: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self::warp()
    }
}

impl EditConfig {
    pub fn warp() -> Self {
        Self {
            total_steps: 100,
            partial_steps: 20,
            guidance_scale: 1000.0,
            guidance_stride: 1,
            num_samples: 8,
            seed: 0,
            refine_steps: 10,
            influence_radius: INFLUENCE_RADIUS,
            weight_sharpness: WEIGHT_SHARPNESS,
        }
    }

    pub fn lattice() -> Self {
        Self { total_steps: 200, partial_steps: 20, refine_steps: 0, ..Self::warp() }
    }

    pub fn nodesign() -> Self {
        Self { total_steps: 100, partial_steps: 25, refine_steps: 0, ..Self::warp() }
    }

    pub fn for_request(req: &EditRequest) -> Self {
        match req {
            EditRequest::Warp { .. } | EditRequest::WarpNodesign { .. } => Self::warp(),
            EditRequest::Lattice { .. } => Self::lattice(),
            EditRequest::Nodesign { .. } => Self::nodesign(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.partial_steps > self.total_steps {
            return Err(Error::InvalidRequest(format!(
                "need 0 <= partial_steps <= total_steps, total_steps > 0; got {}/{}",
                self.partial_steps, self.total_steps
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidRequest("num_samples must be at least 1".into()));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidRequest("guidance_scale must be finite and >= 0".into()));
        }
        if !(self.influence_radius >= 0.0) {
            return Err(Error::InvalidRequest("influence_radius must be non-negative".into()));
        }
        if !(self.weight_sharpness > 0.0) {
            return Err(Error::InvalidRequest("weight_sharpness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Latent,
    Direct,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Latent => "latent",
            Pipeline::Direct => "direct",
        })
    }
}

/// Flat per-candidate, per-refinement-stage record. Reports are computed
/// from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: EditKind,
    pub pipeline: Pipeline,
    pub candidate: usize,
    pub seed: u64,
    pub total_steps: usize,
    pub partial_steps: usize,
    pub guidance_scale: f64,
    pub refine_steps: usize,
    pub compliance: f64,
    pub original_compliance: f64,
    pub ce: f64,
    pub de: Option<f64>,
    pub de_capped: bool,
    pub vf: f64,
    pub vf_target: f64,
    pub vfe: f64,
    pub iou: Option<f64>,
    pub violation: Option<f64>,
    pub failed: bool,
}

/// Ordering key of the selection objective; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionKey {
    pub infeasible: bool,
    pub value: f64,
}

impl SelectionKey {
    pub fn cmp(&self, other: &Self) -> Ordering {
        self.infeasible.cmp(&other.infeasible).then(self.value.total_cmp(&other.value))
    }
}

impl EditRecord {
    /// Warp: `CE + DE`. Lattice and no-design: compliance, with candidates
    /// violating the volume or void constraint ranked after all others.
    pub fn selection_key(&self) -> SelectionKey {
        let value = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        match self.kind {
            EditKind::Warp => SelectionKey { infeasible: false, value: value(self.ce + self.de.unwrap_or(0.0)) },
            EditKind::Lattice => SelectionKey {
                infeasible: (self.vf - self.vf_target).abs() > LATTICE_VF_TOLERANCE,
                value: value(self.compliance),
            },
            EditKind::Nodesign => SelectionKey {
                infeasible: self.violation.unwrap_or(0.0) > NODESIGN_VIOLATION_LIMIT,
                value: value(self.compliance),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub field: DensityField,
    pub record: EditRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    /// Refinement stages in increasing step count; empty when the sample failed.
    pub stages: Vec<Stage>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl Candidate {
    pub fn stage(&self, refine_steps: usize) -> Option<&Stage> {
        self.stages.iter().find(|s| s.record.refine_steps == refine_steps)
    }

    pub fn last(&self) -> Option<&Stage> {
        self.stages.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub request: EditRequest,
    pub config: EditConfig,
    pub original_spec: ProblemSpec,
    pub edited_spec: ProblemSpec,
    /// The unedited design for warps, the lattice or hole reference otherwise.
    pub reference: DensityField,
    pub original_compliance: f64,
    pub direct: Candidate,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn stage_steps(&self) -> Vec<usize> {
        stage_steps(self.config.refine_steps)
    }

    /// Best of the first `n` candidates at a refinement stage.
    pub fn best_of(&self, n: usize, refine_steps: usize) -> Option<usize> {
        select_best_records(self.candidates.iter().take(n).filter_map(|c| c.stage(refine_steps).map(|s| (c.index, &s.record))))
    }
}

/// Refinement checkpoints at which candidates are recorded.
pub fn stage_steps(refine_steps: usize) -> Vec<usize> {
    if refine_steps == 0 {
        vec![0]
    } else {
        vec![0, refine_steps]
    }
}

/// Arg-min of the selection key; ties go to the smaller index.
pub fn select_best_records<'a>(records: impl IntoIterator<Item = (usize, &'a EditRecord)>) -> Option<usize> {
    records
        .into_iter()
        .min_by(|(ia, a), (ib, b)| a.selection_key().cmp(&b.selection_key()).then(ia.cmp(ib)))
        .map(|(i, _)| i)
}

/// Best candidate of the whole set at its final refinement stage.
pub fn select_best(set: &CandidateSet) -> Option<usize> {
    set.best_of(set.candidates.len(), set.config.refine_steps)
}

/// The void value of the affine codec.
pub fn calibrate_z_void() -> f64 {
    encode_field(&DensityField::uniform(4, 4, 0.0)).values()[0]
}

/// Applies the edit directly to the densities and returns the edited field
/// with its updated problem.
pub fn direct_edit(field: &DensityField, spec: &ProblemSpec, req: &EditRequest, opts: &PointWarpOptions) -> Result<(DensityField, ProblemSpec)> {
    req.validate()?;
    match req {
        EditRequest::Warp { warp } => Ok((
            DensityField::from_grid_clamped(warp_grid(field.grid(), warp)),
            warp_problem(spec, warp, opts)?,
        )),
        EditRequest::Lattice { lattice, t_shell } => {
            let (t_lat, vf) = lattice_reference(field, lattice, *t_shell)?;
            Ok((t_lat, ProblemSpec { volume_fraction: vf, ..spec.clone() }))
        }
        EditRequest::Nodesign { hole } => {
            let m = hole_mask(hole.center, hole.radius, field.width(), field.height());
            Ok((apply_hole(field, &m)?, spec.clone()))
        }
        EditRequest::WarpNodesign { warp, hole } => {
            let warped = DensityField::from_grid_clamped(warp_grid(field.grid(), warp));
            let m = hole_mask(hole.center, hole.radius, field.width(), field.height());
            Ok((apply_hole(&warped, &m)?, warp_problem(spec, warp, opts)?))
        }
    }
}

fn lattice_reference(field: &DensityField, lattice: &LatticeSpec, t_shell: f64) -> Result<(DensityField, f64)> {
    let m = infill_mask(field, t_shell)?;
    let l = lattice_pattern(lattice, field.width(), field.height())?;
    compose_lattice(field, &m, &l)
}

/// Everything the scoring of one request needs, fixed before sampling.
struct Scoring {
    kind: EditKind,
    eval_spec: ProblemSpec,
    original_compliance: f64,
    targets: Vec<([f64; 2], f64)>,
    vf_target: f64,
    hole: Option<Mask>,
    iou_ref: Option<DensityField>,
}

/// Latent-side setup shared by all candidates of a request.
struct Plan {
    spec_prime: ProblemSpec,
    reference: DensityField,
    z_start: Latent,
    z_ref: Latent,
    warp: Option<WarpSpec>,
    hole_z: Option<Mask>,
    scoring: Scoring,
}

/// Runs the edit operators against one velocity model.
pub struct Editor<'a> {
    pub model: &'a dyn VelocityModel,
    pub fem: FemModel,
    pub simp: SimpOptions,
    pub point_warp: PointWarpOptions,
}

impl<'a> Editor<'a> {
    pub fn new(model: &'a dyn VelocityModel) -> Self {
        Self { model, fem: FemModel::default(), simp: SimpOptions::default(), point_warp: PointWarpOptions::default() }
    }

    pub fn edit_warp(&self, field: &DensityField, spec: &ProblemSpec, warp: WarpSpec, cfg: &EditConfig) -> Result<CandidateSet> {
        self.run(field, spec, &EditRequest::Warp { warp }, cfg)
    }

    pub fn edit_lattice(&self, field: &DensityField, spec: &ProblemSpec, lattice: LatticeSpec, t_shell: f64, cfg: &EditConfig) -> Result<CandidateSet> {
        self.run(field, spec, &EditRequest::Lattice { lattice, t_shell }, cfg)
    }

    pub fn edit_nodesign(&self, field: &DensityField, spec: &ProblemSpec, center: [f64; 2], radius: f64, cfg: &EditConfig) -> Result<CandidateSet> {
        self.run(field, spec, &EditRequest::Nodesign { hole: Hole { center, radius } }, cfg)
    }

    /// Samples `cfg.num_samples` candidates plus the direct baseline. A
    /// failing candidate is recorded with its error; only invalid requests
    /// and problems that cannot be solved at all abort the set.
    pub fn run(&self, field: &DensityField, spec: &ProblemSpec, req: &EditRequest, cfg: &EditConfig) -> Result<CandidateSet> {
        cfg.validate()?;
        req.validate()?;
        spec.validate()?;
        let plan = self.plan(field, spec, req)?;
        let sched = make_schedule(cfg.total_steps)?;
        let direct = self.direct_candidate(field, spec, req, cfg, &plan.scoring);
        let candidates = (0..cfg.num_samples)
            .map(|i| match self.sample(field, &plan, cfg, &sched, i) {
                Ok(c) => c,
                Err(e) => Candidate { index: i, stages: vec![], error: Some(e.to_string()), warnings: vec![] },
            })
            .collect();
        Ok(CandidateSet {
            request: req.clone(),
            config: cfg.clone(),
            original_spec: spec.clone(),
            edited_spec: plan.spec_prime,
            reference: plan.reference,
            original_compliance: plan.scoring.original_compliance,
            direct,
            candidates,
        })
    }

    /// Noises the design to `cfg.partial_steps` and denoises it with guidance
    /// toward its own latent, without refinement. Uses stream `index` of
    /// `cfg.seed`.
    pub fn reconstruct(&self, field: &DensityField, spec: &ProblemSpec, cfg: &EditConfig, index: usize) -> Result<DensityField> {
        cfg.validate()?;
        let sched = make_schedule(cfg.total_steps)?;
        let z0 = encode_field(&field.to_canonical());
        let tau = cfg.partial_steps;
        let z = if tau == 0 {
            z0.clone()
        } else {
            let eps = gaussian_latent(&mut stream(cfg.seed, index as u64), CANONICAL_SIZE, CANONICAL_SIZE);
            noise(&sched, &z0, tau, &eps)
        };
        let target = GuidanceTarget { z_ref: &z0, weight: None };
        let gcfg = GuidanceConfig { scale: cfg.guidance_scale, stride: cfg.guidance_stride };
        let (out, _) = denoise(self.model, &sched, spec, &z, tau, Some(&target), &gcfg)?;
        Ok(decode_field(&out)?.resample(field.width(), field.height()))
    }

    fn plan(&self, field: &DensityField, spec: &ProblemSpec, req: &EditRequest) -> Result<Plan> {
        let (w, h) = (field.width(), field.height());
        let original_compliance = compliance(field, spec, &self.fem)?;
        let z0 = encode_field(&field.to_canonical());
        let hole_masks = |hole: &Hole| {
            let m = hole_mask(hole.center, hole.radius, w, h);
            let mz = m.resample_nearest(CANONICAL_SIZE, CANONICAL_SIZE);
            (m, mz)
        };
        let warp_targets = |warp: &WarpSpec| -> Vec<([f64; 2], f64)> {
            warp.handles().iter().map(|h| ([h.x + h.dx, h.y + h.dy], h.norm())).collect()
        };
        let base = Scoring {
            kind: req.kind(),
            eval_spec: spec.clone(),
            original_compliance,
            targets: vec![],
            vf_target: spec.volume_fraction,
            hole: None,
            iou_ref: None,
        };
        Ok(match req {
            EditRequest::Warp { warp } => {
                let spec_prime = warp_problem(spec, warp, &self.point_warp)?;
                Plan {
                    reference: field.clone(),
                    z_start: z0.clone(),
                    z_ref: z0,
                    warp: Some(warp.clone()),
                    hole_z: None,
                    scoring: Scoring { eval_spec: spec_prime.clone(), targets: warp_targets(warp), ..base },
                    spec_prime,
                }
            }
            EditRequest::Lattice { lattice, t_shell } => {
                let (t_lat, vf_lat) = lattice_reference(field, lattice, *t_shell)?;
                let z_ref = encode_field(&t_lat.to_canonical());
                Plan {
                    spec_prime: ProblemSpec { volume_fraction: vf_lat, ..spec.clone() },
                    z_start: z_ref.clone(),
                    z_ref,
                    warp: None,
                    hole_z: None,
                    scoring: Scoring { vf_target: vf_lat, iou_ref: Some(t_lat.clone()), ..base },
                    reference: t_lat,
                }
            }
            EditRequest::Nodesign { hole } => {
                let (m, mz) = hole_masks(hole);
                let t_hole = apply_hole(field, &m)?;
                Plan {
                    spec_prime: spec.clone(),
                    z_start: z0,
                    z_ref: encode_field(&t_hole.to_canonical()),
                    warp: None,
                    hole_z: Some(mz),
                    scoring: Scoring { hole: Some(m), ..base },
                    reference: t_hole,
                }
            }
            EditRequest::WarpNodesign { warp, hole } => {
                let (m, mz) = hole_masks(hole);
                let spec_prime = warp_problem(spec, warp, &self.point_warp)?;
                let t_hole = apply_hole(field, &m)?;
                Plan {
                    z_start: z0,
                    z_ref: encode_field(&t_hole.to_canonical()),
                    warp: Some(warp.clone()),
                    hole_z: Some(mz),
                    scoring: Scoring { eval_spec: spec_prime.clone(), targets: warp_targets(warp), hole: Some(m), ..base },
                    spec_prime,
                    reference: t_hole,
                }
            }
        })
    }

    fn sample(&self, field: &DensityField, plan: &Plan, cfg: &EditConfig, sched: &crate::diffusion::NoiseSchedule, index: usize) -> Result<Candidate> {
        let tau = cfg.partial_steps;
        let mut z = if tau == 0 {
            plan.z_start.clone()
        } else {
            let eps = gaussian_latent(&mut stream(cfg.seed, index as u64), CANONICAL_SIZE, CANONICAL_SIZE);
            noise(sched, &plan.z_start, tau, &eps)
        };
        if let Some(w) = &plan.warp {
            z = Latent(warp_grid(&z.0, w));
        }
        if let Some(mz) = &plan.hole_z {
            let zv = calibrate_z_void();
            z = Latent(z.0.zip_with(mz.grid(), |v, m| v * (1.0 - m) + zv * m));
        }
        let weight = match &plan.warp {
            Some(w) => {
                let achieved = achieved_handle(w, &self.point_warp)?;
                Some(warp_weight_map(&achieved, w.handles(), CANONICAL_SIZE, CANONICAL_SIZE, cfg.influence_radius, cfg.weight_sharpness))
            }
            None => None,
        };
        let target = GuidanceTarget { z_ref: &plan.z_ref, weight: weight.as_ref() };
        let gcfg = GuidanceConfig { scale: cfg.guidance_scale, stride: cfg.guidance_stride };
        let (z0, trace) = denoise(self.model, sched, &plan.spec_prime, &z, tau, Some(&target), &gcfg)?;
        let decoded = decode_field(&z0)?.resample(field.width(), field.height());
        let stages = self.stages(decoded, &plan.spec_prime, &plan.scoring, cfg, Pipeline::Latent, index)?;
        Ok(Candidate { index, stages, error: None, warnings: trace.warnings })
    }

    fn direct_candidate(&self, field: &DensityField, spec: &ProblemSpec, req: &EditRequest, cfg: &EditConfig, scoring: &Scoring) -> Candidate {
        let run = || -> Result<Vec<Stage>> {
            let (edited, spec_prime) = direct_edit(field, spec, req, &self.point_warp)?;
            self.stages(edited, &spec_prime, scoring, cfg, Pipeline::Direct, 0)
        };
        match run() {
            Ok(stages) => Candidate { index: 0, stages, error: None, warnings: vec![] },
            Err(e) => Candidate { index: 0, stages: vec![], error: Some(e.to_string()), warnings: vec![] },
        }
    }

    fn stages(&self, start: DensityField, spec_prime: &ProblemSpec, scoring: &Scoring, cfg: &EditConfig, pipeline: Pipeline, index: usize) -> Result<Vec<Stage>> {
        let mut out = Vec::new();
        let mut field = start;
        let mut done = 0;
        for steps in stage_steps(cfg.refine_steps) {
            field = refine(&field, spec_prime, &self.fem, &self.simp, steps - done)?;
            done = steps;
            let record = self.score(&field, scoring, cfg, pipeline, index, steps)?;
            out.push(Stage { field: field.clone(), record });
        }
        Ok(out)
    }

    fn score(&self, field: &DensityField, s: &Scoring, cfg: &EditConfig, pipeline: Pipeline, index: usize, steps: usize) -> Result<EditRecord> {
        let c = compliance(field, &s.eval_spec, &self.fem)?;
        let (de, de_capped) = if s.targets.is_empty() {
            (None, false)
        } else {
            let joints = skeletonize(field).joints;
            let errs: Vec<(f64, bool)> = s.targets.iter().map(|(t, d)| nearest_joint_error(&joints, *t, *d)).collect();
            let mean = errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64;
            (Some(mean), errs.iter().any(|e| e.1))
        };
        let vf = field.mean();
        Ok(EditRecord {
            kind: s.kind,
            pipeline,
            candidate: index,
            seed: cfg.seed,
            total_steps: cfg.total_steps,
            partial_steps: cfg.partial_steps,
            guidance_scale: cfg.guidance_scale,
            refine_steps: steps,
            compliance: c,
            original_compliance: s.original_compliance,
            ce: compliance_error(c, s.original_compliance),
            de,
            de_capped,
            vf,
            vf_target: s.vf_target,
            vfe: volume_fraction_error(vf, s.vf_target),
            iou: s.iou_ref.as_ref().map(|r| iou(field, r)),
            violation: s.hole.as_ref().map(|m| violation_ratio(field, m)),
            failed: classify_failure(s.kind, c, s.original_compliance),
        })
    }
}

/// Runs several requests in sequence, each on the best candidate of the
/// previous one. Warp and hole requests are expected to be merged into a
/// single [`EditRequest::WarpNodesign`] beforehand; lattice goes last.
pub fn compose_edits(
    editor: &Editor,
    field: &DensityField,
    spec: &ProblemSpec,
    requests: &[(EditRequest, EditConfig)],
) -> Result<Vec<CandidateSet>> {
    let mut field = field.clone();
    let mut spec = spec.clone();
    let mut out = Vec::with_capacity(requests.len());
    for (req, cfg) in requests {
        let set = editor.run(&field, &spec, req, cfg)?;
        let best = select_best(&set).ok_or_else(|| Error::InvalidRequest("every candidate failed".into()))?;
        let stage = set.candidates[best].last().expect("selected candidates have stages");
        field = stage.field.clone();
        spec = set.edited_spec.clone();
        out.push(set);
    }
    Ok(out)
}
