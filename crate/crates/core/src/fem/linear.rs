//! Symmetric banded storage, band Cholesky and Jacobi-preconditioned CG.

use crate::error::{Error, Result};

/// Upper band of a symmetric matrix: `a[i*(bw+1) + d] = K[i][i+d]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    pub n: usize,
    pub bw: usize,
    pub a: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, a: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn stride(&self) -> usize {
        self.bw + 1
    }

    /// Adds `v` to `K[i][j]` for `i <= j` (the mirrored entry is implied).
    #[inline]
    pub fn add_upper(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i <= j && j - i <= self.bw, "entry outside band");
        let s = self.stride();
        self.a[i * s + (j - i)] += v;
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.a[i * self.stride()]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let s = self.stride();
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.a[i * s..(i + 1) * s];
            let mut acc = row[0] * x[i];
            let dmax = self.bw.min(self.n - 1 - i);
            for d in 1..=dmax {
                acc += row[d] * x[i + d];
                y[i + d] += row[d] * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// `‖Kx − f‖ / ‖f‖` (0 when `f` is zero).
    pub fn relative_residual(&self, x: &[f64], f: &[f64]) -> f64 {
        let kx = self.matvec(x);
        let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fnorm == 0.0 {
            return 0.0;
        }
        kx.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / fnorm
    }
}

/// In-place `K = UᵀU` factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    u: BandMatrix,
}

impl BandCholesky {
    /// Fails with [`Error::Unconstrained`] on a (numerically) non-positive pivot.
    pub fn factor(mut k: BandMatrix) -> Result<Self> {
        let n = k.n;
        let bw = k.bw;
        let s = bw + 1;
        let max_diag = (0..n).map(|i| k.diag(i).abs()).fold(0.0, f64::max);
        let tol = 1e-13 * max_diag.max(f64::MIN_POSITIVE);
        for i in 0..n {
            let pivot = k.a[i * s];
            if !(pivot > tol) {
                return Err(Error::Unconstrained { dof: i, pivot });
            }
            let r = pivot.sqrt();
            let dmax = bw.min(n - 1 - i);
            {
                let row = &mut k.a[i * s..i * s + dmax + 1];
                row[0] = r;
                let inv = 1.0 / r;
                for v in &mut row[1..] {
                    *v *= inv;
                }
            }
            // Rank-1 update of the trailing band rows.
            let (head, tail) = k.a.split_at_mut((i + 1) * s);
            let row = &head[i * s..i * s + dmax + 1];
            for d1 in 1..=dmax {
                let f = row[d1];
                if f == 0.0 {
                    continue;
                }
                let target = &mut tail[(d1 - 1) * s..(d1 - 1) * s + (dmax - d1) + 1];
                for (t, &v) in target.iter_mut().zip(&row[d1..=dmax]) {
                    *t -= f * v;
                }
            }
        }
        Ok(Self { u: k })
    }

    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let n = self.u.n;
        let bw = self.u.bw;
        let s = bw + 1;
        let a = &self.u.a;
        let mut y = f.to_vec();
        for i in 0..n {
            y[i] /= a[i * s];
            let yi = y[i];
            let dmax = bw.min(n - 1 - i);
            for d in 1..=dmax {
                y[i + d] -= a[i * s + d] * yi;
            }
        }
        for i in (0..n).rev() {
            let dmax = bw.min(n - 1 - i);
            let mut acc = y[i];
            for d in 1..=dmax {
                acc -= a[i * s + d] * y[i + d];
            }
            y[i] = acc / a[i * s];
        }
        y
    }
}

/// Direct solve with one round of iterative refinement when the residual
/// misses `tol`.
pub fn solve_direct(k: &BandMatrix, f: &[f64], tol: f64) -> Result<Vec<f64>> {
    let chol = BandCholesky::factor(k.clone())?;
    let mut x = chol.solve(f);
    for _ in 0..3 {
        let res = k.relative_residual(&x, f);
        if res <= tol {
            return Ok(x);
        }
        let kx = k.matvec(&x);
        let r: Vec<f64> = f.iter().zip(&kx).map(|(a, b)| a - b).collect();
        let dx = chol.solve(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }
    let res = k.relative_residual(&x, f);
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::SolverDiverged { residual: res })
    }
}

/// Conjugate gradient with a diagonal preconditioner.
pub fn solve_pcg(k: &BandMatrix, f: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = k.n;
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut inv_diag = Vec::with_capacity(n);
    for i in 0..n {
        let d = k.diag(i);
        if !(d > 0.0) {
            return Err(Error::Unconstrained { dof: i, pivot: d });
        }
        inv_diag.push(1.0 / d);
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = f.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let kp = k.matvec(&p);
        let pkp = dot(&p, &kp);
        if !(pkp > 0.0) {
            return Err(Error::Unconstrained { dof: 0, pivot: pkp });
        }
        let alpha = rz / pkp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        if dot(&r, &r).sqrt() / fnorm <= tol {
            let res = k.relative_residual(&x, f);
            if res <= tol * 10.0 {
                return Ok(x);
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged { residual: k.relative_residual(&x, f) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> BandMatrix {
        let mut k = BandMatrix::zeros(n, 1);
        for i in 0..n {
            k.add_upper(i, i, 2.0);
            if i + 1 < n {
                k.add_upper(i, i + 1, -1.0);
            }
        }
        k
    }

    #[test]
    fn cholesky_and_pcg_agree() {
        let k = laplacian(50);
        let f: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = solve_direct(&k, &f, 1e-12).unwrap();
        let b = solve_pcg(&k, &f, 1e-12, 1000).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(k.relative_residual(&a, &f) < 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut k = BandMatrix::zeros(3, 1);
        // Free-free spring chain: singular.
        for i in 0..2 {
            k.add_upper(i, i, 1.0);
            k.add_upper(i + 1, i + 1, 1.0);
            k.add_upper(i, i + 1, -1.0);
        }
        assert!(matches!(BandCholesky::factor(k), Err(Error::Unconstrained { .. })));
    }
}
