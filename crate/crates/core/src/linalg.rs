//! Dense complex matrix helpers shared by every module.
//!
//! Norms are operator 2-norms (largest singular value). Rank decisions use a
//! relative singular-value threshold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn from_real(rows: &[Vec<f64>]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMat::from_fn(n, m, |i, j| c(rows[i][j], 0.0))
}

pub fn diag(entries: &[C64]) -> CMat {
    let n = entries.len();
    CMat::from_fn(n, n, |i, j| if i == j { entries[i] } else { C64::new(0.0, 0.0) })
}

/// Jordan block of size `size` with eigenvalue `lambda`.
pub fn jordan_block(size: usize, lambda: C64) -> CMat {
    CMat::from_fn(size, size, |i, j| {
        if i == j {
            lambda
        } else if j == i + 1 {
            c(1.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = zeros(n);
    let mut at = 0;
    for b in blocks {
        let s = b.nrows();
        out.view_mut((at, at), (s, s)).copy_from(b);
        at += s;
    }
    out
}

pub fn conj(m: &CMat) -> CMat {
    m.map(|z| z.conj())
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Operator 2-norm.
pub fn norm(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Rank counting singular values above `tol_rel * sigma_max`.
pub fn rank(m: &CMat, tol_rel: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tol_rel * top).count()
}

/// Rank with an absolute threshold.
pub fn rank_abs(m: &CMat, tol_abs: f64) -> usize {
    singular_values(m).iter().filter(|&&x| x > tol_abs).count()
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    let inv = m.clone().try_inverse()?;
    if inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unitarity_defect(u: &CMat) -> f64 {
    norm(&(u.adjoint() * u - eye(u.ncols())))
}

/// Orthonormal basis (as columns) of the numerical kernel of `m`, threshold `tol_abs`.
pub fn kernel_basis(m: &CMat, tol_abs: f64) -> CMat {
    let n = m.ncols();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    // Pad to square so the SVD returns a full right factor.
    let rows = m.nrows().max(n);
    let mut sq = CMat::zeros(rows, n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut cols = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol_abs {
            cols.push(vt.row(i).adjoint());
        }
    }
    let mut out = CMat::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        out.set_column(j, col);
    }
    out
}

/// Orthonormal basis of the column space of `m` with threshold `tol_abs`.
pub fn range_basis(m: &CMat, tol_abs: f64) -> CMat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return CMat::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol_abs)
        .collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut out = CMat::zeros(m.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Completes the orthonormal columns `q` (inside the span of orthonormal `space`)
/// to an orthonormal basis of `space`.
pub fn complete_basis(q: &CMat, space: &CMat) -> CMat {
    let dim = space.ncols();
    let have = q.ncols();
    if have >= dim {
        return q.clone();
    }
    // Greedy Gram-Schmidt over the columns of `space`, orthogonalized twice.
    let mut out = q.clone();
    let mut cand: Vec<DVector<C64>> = (0..dim).map(|j| space.column(j).into_owned()).collect();
    while out.ncols() < dim {
        for v in cand.iter_mut() {
            for _ in 0..2 {
                let coef = out.adjoint() * &*v;
                *v -= &out * coef;
            }
        }
        let best = (0..cand.len())
            .max_by(|&a, &b| cand[a].norm().partial_cmp(&cand[b].norm()).unwrap())
            .expect("space has columns");
        let nb = cand[best].norm();
        if nb <= 1e-10 {
            break;
        }
        let v = cand.swap_remove(best) / c(nb, 0.0);
        let at = out.ncols();
        out = out.insert_column(at, c(0.0, 0.0));
        let last = out.ncols() - 1;
        out.set_column(last, &v);
    }
    out
}

/// Horizontal concatenation of column blocks.
pub fn hcat(blocks: &[CMat], nrows: usize) -> CMat {
    let ncols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(nrows, ncols);
    let mut at = 0;
    for b in blocks {
        if b.ncols() > 0 {
            out.view_mut((0, at), (nrows, b.ncols())).copy_from(b);
        }
        at += b.ncols();
    }
    out
}

/// Complex Schur form `A = Q T Q*` with `T` upper triangular.
pub fn schur(a: &CMat) -> (CMat, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (zeros(0), zeros(0));
    }
    let (q, mut t) = nalgebra::linalg::Schur::new(a.clone()).unpack();
    for j in 0..n {
        for i in (j + 1)..n {
            t[(i, j)] = c(0.0, 0.0);
        }
    }
    (q, t)
}

/// Swaps adjacent diagonal entries `k`, `k+1` of upper-triangular `t` with a
/// Givens rotation, updating `q` so that `q t q*` is unchanged.
pub fn swap_schur(t: &mut CMat, q: &mut CMat, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let t12 = t[(k, k + 1)];
    let x = t22 - t11;
    // Rotation G with columns mapping e_k to the eigenvector of t22.
    let r = (t12.norm_sqr() + x.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let cs = t12 / r;
    let sn = x / r;
    // G = [[cs, -conj(sn)], [sn, conj(cs)]] on coordinates k, k+1; T <- G* T G.
    for i in 0..n {
        let (a, b) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = cs * a + sn * b;
        t[(i, k + 1)] = -sn.conj() * a + cs.conj() * b;
    }
    for j in 0..n {
        let (a, b) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = cs.conj() * a + sn.conj() * b;
        t[(k + 1, j)] = -sn * a + cs * b;
    }
    for i in 0..n {
        let (a, b) = (q[(i, k)], q[(i, k + 1)]);
        q[(i, k)] = cs * a + sn * b;
        q[(i, k + 1)] = -sn.conj() * a + cs.conj() * b;
    }
    t[(k + 1, k)] = c(0.0, 0.0);
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
}

/// Reorders a Schur form so that the group labels of the diagonal entries ascend
/// (stable bubble sort of adjacent swaps).
pub fn reorder_schur(t: &mut CMat, q: &mut CMat, group: &[usize]) {
    let n = t.nrows();
    let mut g = group.to_vec();
    for pass in 0..n {
        let mut swapped = false;
        for k in 0..n.saturating_sub(1 + pass) {
            if g[k] > g[k + 1] {
                swap_schur(t, q, k);
                g.swap(k, k + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

/// Serialized matrix: row-major real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_mat(m: &CMat) -> Self {
        let re = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect()).collect();
        let im = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect()).collect();
        MatrixJson { re, im }
    }

    /// Returns `None` when the shape is ragged or `re`/`im` disagree.
    pub fn to_mat(&self) -> Option<CMat> {
        let n = self.re.len();
        let m = self.re.first().map_or(0, |r| r.len());
        if self.im.len() != n {
            return None;
        }
        for (r, s) in self.re.iter().zip(&self.im) {
            if r.len() != m || s.len() != m {
                return None;
            }
        }
        Some(CMat::from_fn(n, m, |i, j| c(self.re[i][j], self.im[i][j])))
    }
}
