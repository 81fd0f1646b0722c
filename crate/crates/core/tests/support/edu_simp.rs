//! Straight port of the classic 99-line educational SIMP code: Matlab dof
//! numbering, 1e-3 density floor, sensitivity filter, OC with bisection on
//! [0, 1e5] down to 1e-4. Linear solves use a dense-band LDLᵀ written here,
//! independent of the library's solver.

pub struct EduResult {
    pub x: Vec<Vec<f64>>, // x[ely][elx]
    pub compliance: Vec<f64>,
}

fn lk(nu: f64) -> [[f64; 8]; 8] {
    let e = 1.0;
    let k = [
        0.5 - nu / 6.0,
        1.0 / 8.0 + nu / 8.0,
        -0.25 - nu / 12.0,
        -1.0 / 8.0 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -1.0 / 8.0 - nu / 8.0,
        nu / 6.0,
        1.0 / 8.0 - 3.0 * nu / 8.0,
    ];
    let m = |a: usize| k[a - 1];
    let rows = [
        [m(1), m(2), m(3), m(4), m(5), m(6), m(7), m(8)],
        [m(2), m(1), m(8), m(7), m(6), m(5), m(4), m(3)],
        [m(3), m(8), m(1), m(6), m(7), m(4), m(5), m(2)],
        [m(4), m(7), m(6), m(1), m(8), m(3), m(2), m(5)],
        [m(5), m(6), m(7), m(8), m(1), m(2), m(3), m(4)],
        [m(6), m(5), m(4), m(3), m(2), m(1), m(8), m(7)],
        [m(7), m(4), m(5), m(2), m(3), m(8), m(1), m(6)],
        [m(8), m(3), m(2), m(5), m(4), m(7), m(6), m(1)],
    ];
    let mut ke = [[0.0; 8]; 8];
    for r in 0..8 {
        for c in 0..8 {
            ke[r][c] = e / (1.0 - nu * nu) * rows[r][c];
        }
    }
    ke
}

// 1-based Matlab dofs of element (elx, ely), both 1-based.
fn edof(nely: usize, elx: usize, ely: usize) -> [usize; 8] {
    let n1 = (nely + 1) * (elx - 1) + ely;
    let n2 = (nely + 1) * elx + ely;
    [2 * n1 - 1, 2 * n1, 2 * n2 - 1, 2 * n2, 2 * n2 + 1, 2 * n2 + 2, 2 * n1 + 1, 2 * n1 + 2]
}

/// Symmetric solve by LDLᵀ on a lower band stored as `l[i][k] = A[i][i-bw+k]`.
fn band_ldlt_solve(mut l: Vec<Vec<f64>>, bw: usize, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for j in j0..i {
            // A[i][j] = sum_{k<j} L[i][k] d[k] L[j][k] + L[i][j] d[j]
            let mut s = l[i][j + bw - i];
            let k0 = j0.max(j.saturating_sub(bw));
            for k in k0..j {
                s -= l[i][k + bw - i] * d[k] * l[j][k + bw - j];
            }
            l[i][j + bw - i] = s / d[j];
        }
        let mut s = l[i][bw];
        for k in j0..i {
            let v = l[i][k + bw - i];
            s -= v * v * d[k];
        }
        assert!(s > 0.0, "oracle: singular stiffness");
        d[i] = s;
    }
    for i in 0..n {
        for k in i.saturating_sub(bw)..i {
            b[i] -= l[i][k + bw - i] * b[k];
        }
    }
    for i in 0..n {
        b[i] /= d[i];
    }
    for i in (0..n).rev() {
        for r in i + 1..(i + bw + 1).min(n) {
            b[i] -= l[r][i + bw - r] * b[r];
        }
    }
    b
}

fn fe(nelx: usize, nely: usize, x: &[Vec<f64>], penal: f64, ke: &[[f64; 8]; 8]) -> Vec<f64> {
    let ndof = 2 * (nelx + 1) * (nely + 1);
    let mut fixed = vec![false; ndof + 1];
    for d in (1..=2 * (nely + 1)).step_by(2) {
        fixed[d] = true;
    }
    fixed[2 * (nelx + 1) * (nely + 1)] = true;
    let mut f = vec![0.0; ndof + 1];
    f[2] = -1.0;
    let mut map = vec![usize::MAX; ndof + 1];
    let mut nfree = 0;
    for d in 1..=ndof {
        if !fixed[d] {
            map[d] = nfree;
            nfree += 1;
        }
    }
    let bw = 2 * (nely + 1) + 3;
    let mut l = vec![vec![0.0; bw + 1]; nfree];
    for elx in 1..=nelx {
        for ely in 1..=nely {
            let ed = edof(nely, elx, ely);
            let s = x[ely - 1][elx - 1].powf(penal);
            for a in 0..8 {
                for b in 0..8 {
                    let (i, j) = (map[ed[a]], map[ed[b]]);
                    if i == usize::MAX || j == usize::MAX || j > i {
                        continue;
                    }
                    l[i][j + bw - i] += s * ke[a][b];
                }
            }
        }
    }
    let ff: Vec<f64> = (1..=ndof).filter(|d| !fixed[*d]).map(|d| f[d]).collect();
    let uf = band_ldlt_solve(l, bw, ff);
    let mut u = vec![0.0; ndof + 1];
    for d in 1..=ndof {
        if map[d] != usize::MAX {
            u[d] = uf[map[d]];
        }
    }
    u
}

fn check(nelx: usize, nely: usize, rmin: f64, x: &[Vec<f64>], dc: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut dcn = vec![vec![0.0; nelx]; nely];
    let r = rmin.floor() as isize;
    for i in 1..=nelx as isize {
        for j in 1..=nely as isize {
            let mut sum = 0.0;
            for k in (i - r).max(1)..=(i + r).min(nelx as isize) {
                for l in (j - r).max(1)..=(j + r).min(nely as isize) {
                    let fac = rmin - (((i - k) * (i - k) + (j - l) * (j - l)) as f64).sqrt();
                    sum += fac.max(0.0);
                    dcn[j as usize - 1][i as usize - 1] +=
                        fac.max(0.0) * x[l as usize - 1][k as usize - 1] * dc[l as usize - 1][k as usize - 1];
                }
            }
            dcn[j as usize - 1][i as usize - 1] /= x[j as usize - 1][i as usize - 1] * sum;
        }
    }
    dcn
}

fn oc(nelx: usize, nely: usize, x: &[Vec<f64>], volfrac: f64, dc: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (mut l1, mut l2) = (0.0f64, 100000.0f64);
    let mv = 0.2;
    let mut xnew = x.to_vec();
    while l2 - l1 > 1e-4 {
        let lmid = 0.5 * (l2 + l1);
        let mut total = 0.0;
        for j in 0..nely {
            for i in 0..nelx {
                let v = x[j][i] * (-dc[j][i] / lmid).sqrt();
                let v = 0.001f64.max((x[j][i] - mv).max(1.0f64.min((x[j][i] + mv).min(v))));
                xnew[j][i] = v;
                total += v;
            }
        }
        if total - volfrac * (nelx * nely) as f64 > 0.0 {
            l1 = lmid;
        } else {
            l2 = lmid;
        }
    }
    xnew
}

/// Runs `iters` iterations of the MBB half-beam (load at the top-left node,
/// x-rollers on the left edge, y-roller at the bottom-right node).
pub fn top(nelx: usize, nely: usize, volfrac: f64, penal: f64, rmin: f64, iters: usize) -> EduResult {
    let ke = lk(0.3);
    let mut x = vec![vec![volfrac; nelx]; nely];
    let mut history = Vec::new();
    for _ in 0..iters {
        let u = fe(nelx, nely, &x, penal, &ke);
        let mut c = 0.0;
        let mut dc = vec![vec![0.0; nelx]; nely];
        for ely in 1..=nely {
            for elx in 1..=nelx {
                let ed = edof(nely, elx, ely);
                let mut e = 0.0;
                for a in 0..8 {
                    for b in 0..8 {
                        e += u[ed[a]] * ke[a][b] * u[ed[b]];
                    }
                }
                let xe = x[ely - 1][elx - 1];
                c += xe.powf(penal) * e;
                dc[ely - 1][elx - 1] = -penal * xe.powf(penal - 1.0) * e;
            }
        }
        history.push(c);
        let dcn = check(nelx, nely, rmin, &x, &dc);
        x = oc(nelx, nely, &x, volfrac, &dcn);
    }
    EduResult { x, compliance: history }
}
