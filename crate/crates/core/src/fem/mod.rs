//! Plane-stress bilinear-quad finite elements and SIMP optimization.

pub mod linear;
mod simp;

pub use simp::{
    compliance, density_filter, oc_step, optimize, refine, sensitivity, sensitivity_filter, solve, IterRecord,
    OptimizeResult, SimpOptions, SolveResult,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LinearSolver {
    #[default]
    BandCholesky,
    ConjugateGradient,
}

/// Material and discretization constants. `ke` is the 8×8 stiffness of a
/// unit-modulus unit-square element, dofs ordered (x,y) per node for nodes
/// upper-left, upper-right, lower-right, lower-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemModel {
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
    pub penal: f64,
    #[serde(default)]
    pub solver: LinearSolver,
    #[serde(skip, default = "default_ke")]
    ke: [[f64; 8]; 8],
}

fn default_ke() -> [[f64; 8]; 8] {
    element_stiffness(0.3)
}

impl Default for FemModel {
    fn default() -> Self {
        Self::new(1.0, 1e-9, 0.3, 3.0).expect("default constants are valid")
    }
}

impl FemModel {
    pub fn new(e0: f64, emin: f64, nu: f64, penal: f64) -> Result<Self> {
        if !(e0 > 0.0) || !(emin >= 0.0) || emin / e0 > 1e-6 {
            return Err(Error::InvalidRequest(format!("need 0 <= Emin <= 1e-6*E0, got E0={e0}, Emin={emin}")));
        }
        if !(penal >= 1.0) {
            return Err(Error::InvalidRequest(format!("penalization exponent {penal} < 1")));
        }
        if !(nu > -1.0 && nu < 0.5) {
            return Err(Error::InvalidRequest(format!("Poisson ratio {nu} outside (-1, 0.5)")));
        }
        Ok(Self { e0, emin, nu, penal, solver: LinearSolver::BandCholesky, ke: element_stiffness(nu) })
    }

    pub fn with_solver(mut self, solver: LinearSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn ke(&self) -> &[[f64; 8]; 8] {
        &self.ke
    }

    /// SIMP interpolation `Emin + t^p (E0 − Emin)`.
    #[inline]
    pub fn element_modulus(&self, t: f64) -> f64 {
        self.emin + t.powf(self.penal) * (self.e0 - self.emin)
    }

    /// Derivative of [`FemModel::element_modulus`] with respect to `t`.
    #[inline]
    pub fn element_modulus_slope(&self, t: f64) -> f64 {
        self.penal * t.powf(self.penal - 1.0) * (self.e0 - self.emin)
    }
}

/// Free-function form of [`FemModel::element_modulus`].
pub fn element_modulus(t: f64, model: &FemModel) -> f64 {
    model.element_modulus(t)
}

/// Closed-form bilinear quad stiffness for unit modulus and thickness.
pub fn element_stiffness(nu: f64) -> [[f64; 8]; 8] {
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    let idx: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = 1.0 / (1.0 - nu * nu);
    let mut ke = [[0.0; 8]; 8];
    for r in 0..8 {
        for c in 0..8 {
            ke[r][c] = scale * k[idx[r][c]];
        }
    }
    ke
}

/// Structured quad mesh with column-major node numbering (`nely + 1` nodes
/// per column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mesh {
    pub nelx: usize,
    pub nely: usize,
}

impl Mesh {
    pub fn new(nelx: usize, nely: usize) -> Self {
        Self { nelx, nely }
    }

    pub fn num_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.nely + 1) + j
    }

    /// Global dofs of element `(elx, ely)` in `ke` order.
    #[inline]
    pub fn edofs(&self, elx: usize, ely: usize) -> [usize; 8] {
        let n1 = self.node(elx, ely);
        let n2 = self.node(elx + 1, ely);
        [2 * n1, 2 * n1 + 1, 2 * n2, 2 * n2 + 1, 2 * n2 + 2, 2 * n2 + 3, 2 * n1 + 2, 2 * n1 + 3]
    }

    /// Half-bandwidth of the assembled stiffness.
    pub fn bandwidth(&self) -> usize {
        2 * (self.nely + 1) + 3
    }

    /// Nearest node to a normalized point; exact ties go to the smaller index.
    pub fn snap(&self, x: f64, y: f64) -> (usize, usize) {
        let snap1 = |v: f64, n: usize| -> usize {
            let s = (v.clamp(0.0, 1.0) * n as f64 - 0.5).ceil();
            (s.max(0.0) as usize).min(n)
        };
        (snap1(x, self.nelx), snap1(y, self.nely))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulus_endpoints() {
        let m = FemModel::default();
        assert_eq!(m.element_modulus(1.0), 1.0);
        assert_eq!(m.element_modulus(0.0), 1e-9);
        let m0 = FemModel::new(1.0, 0.0, 0.3, 3.0).unwrap();
        assert_eq!(m0.element_modulus(0.5), 0.125);
    }

    #[test]
    fn modulus_is_monotone() {
        let m = FemModel::default();
        let mut prev = m.element_modulus(0.0);
        for k in 1..=100 {
            let e = m.element_modulus(k as f64 / 100.0);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn element_stiffness_has_three_rigid_modes() {
        let ke = element_stiffness(0.3);
        for r in 0..8 {
            for c in 0..8 {
                assert!((ke[r][c] - ke[c][r]).abs() < 1e-15);
            }
        }
        // Translations in x and y and an infinitesimal rotation produce no force.
        let coords = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let tx: Vec<f64> = (0..8).map(|d| if d % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let ty: Vec<f64> = (0..8).map(|d| if d % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let rot: Vec<f64> = (0..8).map(|d| {
            let (x, y) = coords[d / 2];
            if d % 2 == 0 { -(y - 0.5) } else { x - 0.5 }
        }).collect();
        for mode in [tx, ty, rot] {
            for r in 0..8 {
                let f: f64 = (0..8).map(|c| ke[r][c] * mode[c]).sum();
                assert!(f.abs() < 1e-14);
            }
        }
        // ... and the remaining five eigenvalues are positive: check via the
        // rank of the matrix using Gaussian elimination.
        let mut m = ke;
        let mut rank = 0;
        for col in 0..8 {
            let piv = (rank..8).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            if m[piv][col].abs() < 1e-10 {
                continue;
            }
            m.swap(rank, piv);
            for r in 0..8 {
                if r != rank {
                    let f = m[r][col] / m[rank][col];
                    for c in 0..8 {
                        m[r][c] -= f * m[rank][c];
                    }
                }
            }
            rank += 1;
        }
        assert_eq!(rank, 5);
    }

    #[test]
    fn snapping_breaks_ties_toward_smaller_index() {
        let mesh = Mesh::new(4, 4);
        assert_eq!(mesh.snap(0.0, 1.0), (0, 4));
        assert_eq!(mesh.snap(0.125, 0.5), (0, 2)); // 0.5 node spacing: tie
        assert_eq!(mesh.snap(0.13, 0.5), (1, 2));
    }

    #[test]
    fn invalid_constants_rejected() {
        assert!(FemModel::new(1.0, 1e-3, 0.3, 3.0).is_err());
        assert!(FemModel::new(1.0, 1e-9, 0.3, 0.5).is_err());
    }
}
