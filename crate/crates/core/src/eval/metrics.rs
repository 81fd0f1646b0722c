//! Edit quality metrics.

use serde::{Deserialize, Serialize};

use crate::field::{DensityField, Mask};
use crate::morphology::{binarize, skeletonize};

/// Cap applied to the distance error when the edited field has no joints.
pub const DE_CAP: f64 = 1000.0;
/// Warp candidates fail above this compliance error, in percent.
pub const WARP_FAILURE_CE: f64 = 100.0;
/// Lattice and no-design candidates fail above this compliance ratio.
pub const RATIO_FAILURE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Warp,
    Lattice,
    Nodesign,
}

impl std::fmt::Display for EditKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EditKind::Warp => "warp",
            EditKind::Lattice => "lattice",
            EditKind::Nodesign => "nodesign",
        })
    }
}

/// `100 (c − c₀) / c₀`.
pub fn compliance_error(edited: f64, original: f64) -> f64 {
    100.0 * (edited - original) / original
}

/// Distance from `target` to the nearest skeleton joint of the edited field,
/// as a percentage of the drag length. Returns the value and whether it was
/// capped because no joint was found.
pub fn distance_error(edited: &DensityField, target: [f64; 2], drag: f64) -> (f64, bool) {
    nearest_joint_error(&skeletonize(edited).joints, target, drag)
}

/// [`distance_error`] against an already detected joint list.
pub fn nearest_joint_error(joints: &[[f64; 2]], target: [f64; 2], drag: f64) -> (f64, bool) {
    let d = joints.iter().map(|j| (j[0] - target[0]).hypot(j[1] - target[1])).fold(f64::INFINITY, f64::min);
    if d.is_finite() {
        (100.0 * d / drag, false)
    } else {
        ((100.0 * std::f64::consts::SQRT_2 / drag).min(DE_CAP), true)
    }
}

/// Intersection over union of the two fields binarized at 0.5; 1 when both
/// are empty.
pub fn iou(a: &DensityField, b: &DensityField) -> f64 {
    let (ma, mb) = (binarize(a, 0.5), binarize(b, 0.5));
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ma.values().iter().zip(mb.values()) {
        let (x, y) = (*x > 0.5, *y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Percentage of the hole occupied by material (field binarized at 0.5).
/// An empty hole has no violation.
pub fn violation_ratio(edited: &DensityField, hole: &Mask) -> f64 {
    let solid = binarize(edited, 0.5);
    let area = hole.sum();
    if area == 0.0 {
        return 0.0;
    }
    let occupied: f64 = solid.values().iter().zip(hole.values()).map(|(s, m)| s * m).sum();
    100.0 * occupied / area
}

/// `100 |vf − target| / target`.
pub fn volume_fraction_error(vf: f64, target: f64) -> f64 {
    100.0 * (vf - target).abs() / target
}

/// Failure flag: warp fails above 100% compliance error, lattice and
/// no-design above 1000× the original compliance.
pub fn classify_failure(kind: EditKind, edited: f64, original: f64) -> bool {
    if !edited.is_finite() {
        return true;
    }
    match kind {
        EditKind::Warp => compliance_error(edited, original) > WARP_FAILURE_CE,
        EditKind::Lattice | EditKind::Nodesign => edited > RATIO_FAILURE * original,
    }
}
