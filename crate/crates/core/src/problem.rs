//! Boundary-value problem description shared by the solver, the prior and
//! the edit operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub x: f64,
    pub y: f64,
    pub fix_x: bool,
    pub fix_y: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub x: f64,
    pub y: f64,
    pub fx: f64,
    pub fy: f64,
}

/// Supports, loads, target volume fraction and domain geometry. Point
/// coordinates are normalized to `[0,1]²` (y downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub supports: Vec<Support>,
    pub loads: Vec<Load>,
    pub volume_fraction: f64,
    pub aspect: [f64; 2],
    pub cell_size: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.supports.is_empty() {
            return Err(Error::parse("supports", "at least one support is required"));
        }
        if self.loads.is_empty() {
            return Err(Error::parse("loads", "at least one load is required"));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::parse("volume_fraction", format!("{} not in (0,1)", self.volume_fraction)));
        }
        if !(self.aspect[0] > 0.0 && self.aspect[1] > 0.0) {
            return Err(Error::parse("aspect", "aspect entries must be positive"));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::parse("cell_size", "cell size must be positive"));
        }
        let in_unit = |x: f64, y: f64| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y);
        if let Some(k) = self.supports.iter().position(|s| !in_unit(s.x, s.y)) {
            return Err(Error::parse(format!("supports[{k}]"), "coordinates outside [0,1]"));
        }
        if let Some(k) = self.supports.iter().position(|s| !s.fix_x && !s.fix_y) {
            return Err(Error::parse(format!("supports[{k}]"), "support fixes neither direction"));
        }
        if let Some(k) = self.loads.iter().position(|l| !in_unit(l.x, l.y) || !l.fx.is_finite() || !l.fy.is_finite()) {
            return Err(Error::parse(format!("loads[{k}]"), "coordinates outside [0,1] or non-finite force"));
        }
        Ok(())
    }

    /// The default aspect for a `width × height` element grid.
    pub fn aspect_for(width: usize, height: usize) -> [f64; 2] {
        let m = width.max(height) as f64;
        [width as f64 / m, height as f64 / m]
    }

    /// Left-right mirror of every point and force.
    pub fn flip_x(&self) -> ProblemSpec {
        let mut s = self.clone();
        for p in &mut s.supports {
            p.x = 1.0 - p.x;
        }
        for l in &mut s.loads {
            l.x = 1.0 - l.x;
            l.fx = -l.fx;
        }
        s
    }

    /// Top-bottom mirror of every point and force.
    pub fn flip_y(&self) -> ProblemSpec {
        let mut s = self.clone();
        for p in &mut s.supports {
            p.y = 1.0 - p.y;
        }
        for l in &mut s.loads {
            l.y = 1.0 - l.y;
            l.fy = -l.fy;
        }
        s
    }

    /// Half MBB beam: roller line on the left edge, vertical roller at the
    /// bottom-right corner, unit downward load at the top-left corner.
    pub fn mbb(nelx: usize, nely: usize, volume_fraction: f64) -> ProblemSpec {
        let mut supports: Vec<Support> = (0..=nely)
            .map(|j| Support { x: 0.0, y: j as f64 / nely as f64, fix_x: true, fix_y: false })
            .collect();
        supports.push(Support { x: 1.0, y: 1.0, fix_x: false, fix_y: true });
        ProblemSpec {
            supports,
            loads: vec![Load { x: 0.0, y: 0.0, fx: 0.0, fy: 1.0 }],
            volume_fraction,
            aspect: Self::aspect_for(nelx, nely),
            cell_size: 1.0,
        }
    }

    /// Cantilever clamped along the left edge with a vertical load at the
    /// middle of the right edge.
    pub fn cantilever(nelx: usize, nely: usize, volume_fraction: f64) -> ProblemSpec {
        let supports = (0..=nely)
            .map(|j| Support { x: 0.0, y: j as f64 / nely as f64, fix_x: true, fix_y: true })
            .collect();
        ProblemSpec {
            supports,
            loads: vec![Load { x: 1.0, y: 0.5, fx: 0.0, fy: 1.0 }],
            volume_fraction,
            aspect: Self::aspect_for(nelx, nely),
            cell_size: 1.0,
        }
    }
}
