//! Binary shape analysis: distance transform, thinning skeleton, joints,
//! shell/infill split, lattice patterns and hole masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DensityField, Grid, Mask};

/// Spurs shorter than this (in pixels) are pruned before joint detection.
pub const SPUR_LENGTH: usize = 3;
/// Junction pixels closer than this are merged into one joint.
pub const JOINT_MERGE_RADIUS: f64 = 2.0;

/// `1` where `field > threshold`.
pub fn binarize(field: &DensityField, threshold: f64) -> Mask {
    Mask::from_fn(field.width(), field.height(), |i, j| if field.at(i, j) > threshold { 1.0 } else { 0.0 })
}

/// Exact Euclidean distance from every solid pixel center to the nearest void
/// pixel center. Everything outside the grid counts as void; void pixels are 0.
pub fn distance_transform(solid: &Mask) -> Grid {
    let (w, h) = (solid.width(), solid.height());
    // One-pixel void border so the domain boundary acts as void.
    let (pw, ph) = (w + 2, h + 2);
    let inf = 1e20;
    let mut d = vec![0.0; pw * ph];
    for j in 0..h {
        for i in 0..w {
            if solid.is_set(i, j) {
                d[(j + 1) * pw + i + 1] = inf;
            }
        }
    }
    let mut buf = vec![0.0; pw.max(ph)];
    let mut out = vec![0.0; pw.max(ph)];
    for j in 0..ph {
        buf[..pw].copy_from_slice(&d[j * pw..(j + 1) * pw]);
        edt_1d(&buf[..pw], &mut out[..pw]);
        d[j * pw..(j + 1) * pw].copy_from_slice(&out[..pw]);
    }
    for i in 0..pw {
        for j in 0..ph {
            buf[j] = d[j * pw + i];
        }
        edt_1d(&buf[..ph], &mut out[..ph]);
        for j in 0..ph {
            d[j * pw + i] = out[j];
        }
    }
    Grid::from_fn(w, h, |i, j| d[(j + 1) * pw + i + 1].sqrt())
}

/// Squared distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub mask: Mask,
    pub distance: Grid,
    /// Normalized element-center coordinates of the junctions.
    pub joints: Vec<[f64; 2]>,
}

/// Zhang–Suen thinning of `solid` plus its Euclidean distance transform and
/// junctions.
pub fn medial_axis(solid: &Mask) -> Skeleton {
    let distance = distance_transform(solid);
    let mask = thin(solid);
    let joints = joints_of(&mask);
    Skeleton { mask, distance, joints }
}

// 8-neighbours in ring order P2..P9: N, NE, E, SE, S, SW, W, NW.
const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

struct Bits {
    w: usize,
    h: usize,
    b: Vec<bool>,
}

impl Bits {
    fn from_mask(m: &Mask) -> Self {
        Self { w: m.width(), h: m.height(), b: m.bits() }
    }

    #[inline]
    fn get(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.w && (j as usize) < self.h && self.b[j as usize * self.w + i as usize]
    }

    fn ring(&self, i: usize, j: usize) -> [bool; 8] {
        std::array::from_fn(|k| self.get(i as isize + RING[k].0, j as isize + RING[k].1))
    }

    fn to_mask(&self) -> Mask {
        Mask::from_bools(self.w, self.h, &self.b)
    }
}

fn transitions(r: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !r[k] && r[(k + 1) % 8]).count()
}

fn thin(solid: &Mask) -> Mask {
    let mut s = Bits::from_mask(solid);
    let mut del = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            del.clear();
            for j in 0..s.h {
                for i in 0..s.w {
                    if !s.b[j * s.w + i] {
                        continue;
                    }
                    let r = s.ring(i, j);
                    let n = r.iter().filter(|v| **v).count();
                    if !(2..=6).contains(&n) || transitions(&r) != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (r[0], r[2], r[4], r[6]);
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        del.push(j * s.w + i);
                    }
                }
            }
            for &k in &del {
                s.b[k] = false;
            }
            changed |= !del.is_empty();
        }
        if !changed {
            break;
        }
    }
    s.to_mask()
}

fn neighbours(s: &Bits, i: usize, j: usize) -> Vec<(usize, usize)> {
    RING.iter()
        .filter_map(|&(di, dj)| {
            let (x, y) = (i as isize + di, j as isize + dj);
            s.get(x, y).then_some((x as usize, y as usize))
        })
        .collect()
}

/// Removes end branches shorter than [`SPUR_LENGTH`] that hang off a junction.
fn prune_spurs(s: &mut Bits) {
    let ends: Vec<(usize, usize)> = (0..s.h)
        .flat_map(|j| (0..s.w).map(move |i| (i, j)))
        .filter(|&(i, j)| s.b[j * s.w + i] && neighbours(s, i, j).len() == 1)
        .collect();
    let mut remove = Vec::new();
    for start in ends {
        let mut path = vec![start];
        let spur = loop {
            let cur = *path.last().expect("path starts non-empty");
            let next: Vec<_> = neighbours(s, cur.0, cur.1).into_iter().filter(|p| !path.contains(p)).collect();
            if next.is_empty() {
                break false;
            }
            if next.len() > 1 || next.iter().any(|p| neighbours(s, p.0, p.1).len() >= 3) {
                break true;
            }
            if path.len() >= SPUR_LENGTH {
                break false;
            }
            path.push(next[0]);
        };
        if spur && path.len() < SPUR_LENGTH {
            remove.extend(path);
        }
    }
    for (i, j) in remove {
        s.b[j * s.w + i] = false;
    }
}

fn joints_of(skeleton: &Mask) -> Vec<[f64; 2]> {
    let mut s = Bits::from_mask(skeleton);
    prune_spurs(&mut s);
    let mut junctions = Vec::new();
    for j in 0..s.h {
        for i in 0..s.w {
            if s.b[j * s.w + i] && transitions(&s.ring(i, j)) >= 3 {
                junctions.push((i, j));
            }
        }
    }
    // Single-linkage clusters within the merge radius.
    let n = junctions.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut a: usize) -> usize {
        while label[a] != a {
            label[a] = label[label[a]];
            a = label[a];
        }
        a
    }
    for a in 0..n {
        for b in a + 1..n {
            let (dx, dy) = (junctions[a].0 as f64 - junctions[b].0 as f64, junctions[a].1 as f64 - junctions[b].1 as f64);
            if (dx * dx + dy * dy).sqrt() <= JOINT_MERGE_RADIUS {
                let (ra, rb) = (root(&mut label, a), root(&mut label, b));
                label[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut clusters: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for a in 0..n {
        let r = root(&mut label, a);
        match clusters.iter_mut().find(|c| c.0 == r) {
            Some(c) => c.1.push(junctions[a]),
            None => clusters.push((r, vec![junctions[a]])),
        }
    }
    let (w, h) = (s.w as f64, s.h as f64);
    clusters
        .into_iter()
        .map(|(_, pts)| {
            let cx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / pts.len() as f64;
            let cy = pts.iter().map(|p| p.1 as f64).sum::<f64>() / pts.len() as f64;
            // Report the cluster member nearest to the centroid so the joint stays on the skeleton.
            let best = *pts
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 as f64 - cx).powi(2) + (a.1 as f64 - cy).powi(2);
                    let db = (b.0 as f64 - cx).powi(2) + (b.1 as f64 - cy).powi(2);
                    da.total_cmp(&db)
                })
                .expect("clusters are non-empty");
            [(best.0 as f64 + 0.5) / w, (best.1 as f64 + 0.5) / h]
        })
        .collect()
}

/// Junctions of the skeleton after spur pruning, merged within 2 px.
pub fn detect_joints(sk: &Skeleton) -> Vec<[f64; 2]> {
    joints_of(&sk.mask)
}

/// Skeleton of the field binarized at 0.5.
pub fn skeletonize(field: &DensityField) -> Skeleton {
    medial_axis(&binarize(field, 0.5))
}

/// Twice the largest inscribed radius of the solid (field binarized at 0.5).
/// The global distance maximum always lies on the medial axis.
pub fn max_member_thickness(field: &DensityField) -> f64 {
    let d = distance_transform(&binarize(field, 0.5));
    2.0 * d.values.iter().copied().fold(0.0, f64::max)
}

/// Interior pixels deeper than `t_shell`. The depth of a solid pixel is its
/// distance to the nearest void pixel center minus half a pixel, i.e. the
/// distance from its center to the solid boundary.
pub fn infill_mask(field: &DensityField, t_shell: f64) -> Result<Mask> {
    if !(t_shell > 0.0) {
        return Err(Error::InvalidRequest(format!("shell thickness must be positive, got {t_shell}")));
    }
    let d = distance_transform(&binarize(field, 0.5));
    Ok(Mask::from_fn(field.width(), field.height(), |i, j| if d.at(i, j) - 0.5 > t_shell { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Grid,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub pitch: usize,
    pub member: f64,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.member > 0.0 && self.member < self.pitch as f64) {
            return Err(Error::InvalidRequest(format!(
                "lattice needs 0 < member < pitch, got member {} pitch {}",
                self.member, self.pitch
            )));
        }
        Ok(())
    }
}

/// Periodic stripe pattern anchored at element (0,0).
pub fn lattice_pattern(spec: &LatticeSpec, width: usize, height: usize) -> Result<Mask> {
    spec.validate()?;
    let p = spec.pitch as isize;
    let on = |v: isize| (v.rem_euclid(p) as f64) < spec.member;
    Ok(Mask::from_fn(width, height, |i, j| {
        let (i, j) = (i as isize, j as isize);
        let hit = match spec.kind {
            LatticeKind::Grid => on(i) || on(j),
            LatticeKind::Cross => on(i + j) || on(i - j),
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }))
}

/// `T ⊙ (1 − M) + L ⊙ M` and its mean.
pub fn compose_lattice(field: &DensityField, mask: &Mask, lat: &Mask) -> Result<(DensityField, f64)> {
    check_shape(field, mask)?;
    check_shape(field, lat)?;
    let g = Grid::from_fn(field.width(), field.height(), |i, j| {
        let m = mask.at(i, j);
        field.at(i, j) * (1.0 - m) + lat.at(i, j) * m
    });
    let out = DensityField::from_grid_clamped(g);
    let vf = out.mean();
    Ok((out, vf))
}

/// Disk of normalized radius `radius` around `center`. Distances are measured
/// in units of the longer grid side so the disk stays round on non-square grids.
pub fn hole_mask(center: [f64; 2], radius: f64, width: usize, height: usize) -> Mask {
    if !(radius > 0.0) {
        return Mask::empty(width, height);
    }
    let m = width.max(height) as f64;
    let (sx, sy) = (width as f64 / m, height as f64 / m);
    Mask::from_fn(width, height, |i, j| {
        let dx = ((i as f64 + 0.5) / width as f64 - center[0]) * sx;
        let dy = ((j as f64 + 0.5) / height as f64 - center[1]) * sy;
        if (dx * dx + dy * dy).sqrt() <= radius {
            1.0
        } else {
            0.0
        }
    })
}

/// `T ⊙ (1 − M)`.
pub fn apply_hole(field: &DensityField, hole: &Mask) -> Result<DensityField> {
    check_shape(field, hole)?;
    let g = field.grid().zip_with(hole.grid(), |t, m| t * (1.0 - m));
    Ok(DensityField::from_grid_clamped(g))
}

/// Binary erosion by a square structuring element of half-width `r`; outside
/// the grid counts as unset.
pub fn erode(mask: &Mask, r: usize) -> Mask {
    let s = Bits::from_mask(mask);
    let r = r as isize;
    Mask::from_fn(mask.width(), mask.height(), |i, j| {
        let keep = (-r..=r).all(|dj| (-r..=r).all(|di| s.get(i as isize + di, j as isize + dj)));
        if keep {
            1.0
        } else {
            0.0
        }
    })
}

fn check_shape(field: &DensityField, m: &Mask) -> Result<()> {
    if field.width() != m.width() || field.height() != m.height() {
        return Err(Error::InvalidRequest(format!(
            "mask shape {}x{} does not match field {}x{}",
            m.width(),
            m.height(),
            field.width(),
            field.height()
        )));
    }
    Ok(())
}
