//! Jordan normal form of nilpotent matrices with explicit conjugation bounds.
//!
//! The pipeline is: unitary column echelon form from the kernel filtration
//! `K_j = ker N^j`, thresholding of small pivots into a perturbation `F`,
//! diagonal scaling of the surviving pivots to 1, then elimination of the
//! entries above the pivots by transvections `I + aE_{k,i}` and a final
//! permutation. Every constant that grows like `(2n)!` is handled as a
//! logarithm.
//!
//! Block-diagonal inputs are processed block by block, so every conjugation
//! keeps the block decomposition of the input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{ln0, ln_add, ln_factorial, Inequality};
use crate::linalg::{self, c, CMat, C64};

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Below this modulus an entry counts as zero when reading a Jordan pattern.
pub const PATTERN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JordanError {
    #[error("matrix is not nilpotent: ‖N^n‖ = {power_norm:e} > {bound:e}")]
    NotNilpotent { power_norm: f64, bound: f64 },
    #[error("pivot |{value:e}| at ({row}, {col}) is below delta = {delta:e}")]
    PivotBelowDelta { row: usize, col: usize, value: f64, delta: f64 },
    #[error("delta schedule violates the summability condition at k = {k}: {lhs:e} > {rhs:e}")]
    ScheduleViolated { k: usize, lhs: f64, rhs: f64 },
    #[error("thresholded echelonization did not stop after {steps} steps")]
    NonConvergence { steps: usize },
    #[error("pivot in column {col} is {value}, expected 1")]
    NonUnitPivot { col: usize, value: C64 },
    #[error("matrix is not in column echelon form: {0}")]
    NotEchelon(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("conjugating matrix is singular")]
    SingularConjugation,
    #[error("xi = {xi} is below max(‖C‖, ‖C^-1‖) = {norm}")]
    XiTooSmall { xi: f64, norm: f64 },
    #[error("spectrum is not closed under conjugation: no partner for {0}")]
    NotConjugationStable(C64),
    #[error("Jordan structures of {0} and its conjugate differ")]
    StructureMismatch(C64),
    #[error("matrix is not in Jordan normal form: {0}")]
    NotJordan(String),
}

pub type Result<T> = std::result::Result<T, JordanError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Pivot {
    pub row: usize,
    pub col: usize,
    pub value: C64,
}

/// Unitary column echelon form: `basis* · N · basis = echelon`.
#[derive(Clone, Debug, PartialEq)]
pub struct EchelonForm {
    pub basis: CMat,
    pub echelon: CMat,
    /// `r_j = dim U_j`, non-increasing.
    pub block_dims: Vec<usize>,
    pub pivots: Vec<Pivot>,
}

fn check_square(m: &CMat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(JordanError::InvalidArgument(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

fn check_blocks(n: usize, blocks: &[usize]) -> Result<Vec<usize>> {
    if blocks.is_empty() {
        return Ok(vec![n]);
    }
    if blocks.iter().sum::<usize>() != n || blocks.contains(&0) {
        return Err(JordanError::InvalidArgument(format!("block sizes {blocks:?} do not partition {n}")));
    }
    Ok(blocks.to_vec())
}

fn block_offsets(blocks: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(blocks.len());
    let mut at = 0;
    for &b in blocks {
        off.push(at);
        at += b;
    }
    off
}

fn sub_block(m: &CMat, at: usize, size: usize) -> CMat {
    m.view((at, at), (size, size)).into_owned()
}

/// Column echelon form of a nilpotent matrix.
///
/// The kernel filtration is built incrementally (`U_j` is the kernel of `N^j`
/// restricted to `K_{j-1}^⊥`) with singular-value threshold
/// `rank_tol·‖N‖^j`. The basis of `U_{j-1}` comes from a QR factorization of
/// the projected images of the basis of `U_j`.
pub fn column_echelon(n_mat: &CMat, rank_tol: f64) -> Result<EchelonForm> {
    let n = check_square(n_mat)?;
    let scale = linalg::norm(n_mat);
    if scale == 0.0 {
        return Ok(EchelonForm {
            basis: linalg::eye(n),
            echelon: linalg::zeros(n),
            block_dims: vec![n],
            pivots: Vec::new(),
        });
    }
    let power_norm = linalg::norm(&n_mat.pow(n as u32));
    let bound = rank_tol * scale.powi(n as i32);
    if power_norm > bound {
        return Err(JordanError::NotNilpotent { power_norm, bound });
    }

    // Kernel filtration.
    let mut levels: Vec<CMat> = Vec::new();
    let mut kernel = CMat::zeros(n, 0);
    let mut power = linalg::eye(n);
    while kernel.ncols() < n {
        power = &power * n_mat;
        let complement = if kernel.ncols() == 0 {
            linalg::eye(n)
        } else {
            linalg::kernel_basis(&kernel.adjoint(), 1e-12)
        };
        let j = levels.len() as i32 + 1;
        let restricted = &power * &complement;
        let y = linalg::kernel_basis(&restricted, rank_tol * scale.powi(j));
        if y.ncols() == 0 {
            return Err(JordanError::NotNilpotent { power_norm, bound });
        }
        let u = &complement * y;
        kernel = linalg::hcat(&[kernel, u.clone()], n);
        levels.push(u);
        if levels.len() > n {
            return Err(JordanError::NotNilpotent { power_norm, bound });
        }
    }
    let m = levels.len();
    let dims: Vec<usize> = levels.iter().map(|u| u.ncols()).collect();
    if dims.windows(2).any(|w| w[1] > w[0]) {
        return Err(JordanError::NotEchelon(format!("kernel increments {dims:?} are not non-increasing")));
    }

    // Top-down orthonormal bases with triangular images.
    let mut bases: Vec<CMat> = levels.clone();
    for j in (1..m).rev() {
        let lower = &levels[j - 1];
        let images = lower.adjoint() * n_mat * &bases[j];
        let q = images.clone().qr().q();
        let full = linalg::complete_basis(&q, &linalg::eye(lower.ncols()));
        if full.ncols() != lower.ncols() {
            return Err(JordanError::NotEchelon("could not complete the level basis".into()));
        }
        bases[j - 1] = lower * full;
    }
    let basis = linalg::hcat(&bases, n);
    let mut echelon = basis.adjoint() * n_mat * &basis;

    // Zero the entries outside the staircase pattern (rounding noise).
    let offsets = block_offsets(&dims);
    let level_of: Vec<usize> = (0..m).flat_map(|j| std::iter::repeat(j).take(dims[j])).collect();
    for col in 0..n {
        for row in 0..n {
            let (lr, lc) = (level_of[row], level_of[col]);
            let keep = if lr >= lc {
                false
            } else if lr + 1 == lc {
                row - offsets[lr] <= col - offsets[lc]
            } else {
                true
            };
            if !keep {
                echelon[(row, col)] = c(0.0, 0.0);
            }
        }
    }
    let mut pivots = Vec::new();
    for j in 1..m {
        for l in 0..dims[j] {
            let (row, col) = (offsets[j - 1] + l, offsets[j] + l);
            pivots.push(Pivot { row, col, value: echelon[(row, col)] });
        }
    }
    Ok(EchelonForm { basis, echelon, block_dims: dims, pivots })
}

/// Pivots read off any column echelon matrix: the last nonzero entry of each nonzero column.
pub fn read_pivots(a: &CMat) -> Result<Vec<Pivot>> {
    let n = check_square(a)?;
    let mut out = Vec::new();
    let mut last_row: Option<usize> = None;
    for col in 0..n {
        let row = (0..n).rev().find(|&r| a[(r, col)] != c(0.0, 0.0));
        if let Some(r) = row {
            if last_row.map_or(false, |lr| r <= lr) {
                return Err(JordanError::NotEchelon(format!("column {col} is not longer than its predecessor")));
            }
            last_row = Some(r);
            out.push(Pivot { row: r, col, value: a[(r, col)] });
        } else if last_row.is_some() {
            return Err(JordanError::NotEchelon(format!("zero column {col} after a nonzero column")));
        }
    }
    Ok(out)
}

/// Diagonal scaling that turns every pivot into 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub s: CMat,
    pub s_inv: CMat,
    pub reduced: CMat,
    /// `ln((max(1,‖B‖)/min(1,δ))^{n/2})`, the bound on `‖S^{±1}‖` after balancing.
    pub ln_bound: f64,
}

/// Scales pivots to 1: `s_col = s_row / pivot`, `s = 1` on zero columns, then
/// multiplies by the balancing factor `sqrt(max|1/s| / max|s|)`.
pub fn scale_pivots(e: &EchelonForm, delta: f64) -> Result<Scaling> {
    scale_matrix_pivots(&e.echelon, &e.pivots, delta.ln())
}

fn scale_matrix_pivots(b: &CMat, pivots: &[Pivot], ln_delta: f64) -> Result<Scaling> {
    let n = check_square(b)?;
    for p in pivots {
        if ln0(p.value.norm()) < ln_delta {
            return Err(JordanError::PivotBelowDelta { row: p.row, col: p.col, value: p.value.norm(), delta: ln_delta.exp() });
        }
    }
    let mut s = vec![c(1.0, 0.0); n];
    let mut sorted: Vec<&Pivot> = pivots.iter().collect();
    sorted.sort_by_key(|p| p.col);
    for p in sorted {
        if p.row >= p.col {
            return Err(JordanError::NotEchelon(format!("pivot ({}, {}) is not above the diagonal", p.row, p.col)));
        }
        s[p.col] = s[p.row] / p.value;
    }
    let max_s = s.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_inv = s.iter().map(|z| 1.0 / z.norm()).fold(0.0, f64::max);
    let lambda = (max_inv / max_s).sqrt();
    let sv: Vec<C64> = s.iter().map(|z| z * lambda).collect();
    let s_mat = linalg::diag(&sv);
    let s_inv = linalg::diag(&sv.iter().map(|z| z.inv()).collect::<Vec<_>>());
    let mut reduced = &s_inv * b * &s_mat;
    for p in pivots {
        reduced[(p.row, p.col)] = c(1.0, 0.0);
    }
    let nb = linalg::norm(b);
    let ln_bound = n as f64 / 2.0 * (ln0(nb).max(0.0) - ln_delta.min(0.0));
    Ok(Scaling { s: s_mat, s_inv, reduced, ln_bound })
}

/// The decreasing exponents `δ_k` (stored as logarithms) driving the pivot thresholds `ε^{δ_k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    /// `ln δ_k` for `k = 0, 1, ...`.
    pub ln_delta: Vec<f64>,
    /// `ln c_n` with `c_n = 2(n+1)(2n)! + n`.
    pub ln_c_n: f64,
    pub m: usize,
}

/// `ln(2(n+1)(2n)! + n)`.
pub fn ln_c_n(n: usize) -> f64 {
    let head = (2.0 * (n as f64 + 1.0)).ln() + ln_factorial(2 * n);
    head + ((n as f64).ln() - head).exp().ln_1p()
}

impl DeltaSchedule {
    /// `δ_0 = 1`, `δ_{k-1} = 2(m+2)c_n δ_k`, for `k < len`.
    pub fn standard(n: usize, m: usize, len: usize) -> Self {
        let c = ln_c_n(n);
        let step = (2.0 * (m as f64 + 2.0)).ln() + c;
        DeltaSchedule { ln_delta: (0..len.max(2)).map(|k| -(k as f64) * step).collect(), ln_c_n: c, m }
    }

    /// User-supplied exponents `δ_0, δ_1, ...` (positive, strictly decreasing).
    pub fn custom(deltas: &[f64], n: usize, m: usize) -> Result<Self> {
        if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(JordanError::InvalidArgument("deltas must be positive and strictly decreasing".into()));
        }
        Ok(DeltaSchedule { ln_delta: deltas.iter().map(|d| d.ln()).collect(), ln_c_n: ln_c_n(n), m })
    }

    pub fn len(&self) -> usize {
        self.ln_delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_delta.is_empty()
    }

    /// `ln ε^{δ_k} = δ_k ln ε`.
    pub fn ln_threshold(&self, k: usize, eps: f64) -> f64 {
        -(self.ln_delta[k] + (-eps.ln()).ln()).exp()
    }

    /// `ε^{δ_1} + … + ε^{δ_k} ≤ 2ε^{δ_k}`, compared in logarithms.
    pub fn summability(&self, k: usize, eps: f64) -> Inequality {
        let lhs = (1..=k).map(|i| self.ln_threshold(i, eps)).fold(f64::NEG_INFINITY, ln_add);
        let rhs = 2f64.ln() + self.ln_threshold(k, eps);
        Inequality::le(format!("threshold summability k={k} (ln)"), lhs, rhs)
    }
}

/// Output of the thresholded echelonization.
#[derive(Clone, Debug, PartialEq)]
pub struct EchelonIterate {
    pub s: CMat,
    pub s_inv: CMat,
    /// Block-diagonal, each block on reduced column echelon form.
    pub a_prime: CMat,
    /// `S^{-1} N S − A'`, accumulated from the thresholded pivots.
    pub f: CMat,
    pub k_used: usize,
    pub inequalities: Vec<Inequality>,
    pub warnings: Vec<String>,
}

struct BlockState {
    v: CMat,
    a: CMat,
    fp: CMat,
    pivots: Vec<Pivot>,
}

fn echelon_block(block: &CMat, rank_tol: f64) -> Result<BlockState> {
    let e = column_echelon(block, rank_tol)?;
    let fp = e.basis.adjoint() * block * &e.basis - &e.echelon;
    Ok(BlockState { v: e.basis, a: e.echelon, fp, pivots: e.pivots })
}

/// Thresholded echelonization: pivots with `|p| ≤ ε^{δ_k}` move into `F`, the
/// rest is re-echelonized, until no pivot is below the current threshold;
/// then the surviving pivots are scaled to 1.
pub fn echelonize_iterate(
    n_mat: &CMat,
    blocks: &[usize],
    eps: f64,
    schedule: &DeltaSchedule,
    rank_tol: f64,
) -> Result<EchelonIterate> {
    let n = check_square(n_mat)?;
    let blocks = check_blocks(n, blocks)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(JordanError::InvalidArgument(format!("epsilon = {eps} is not in (0, 1)")));
    }
    let offsets = block_offsets(&blocks);
    let mut states = Vec::with_capacity(blocks.len());
    for (&at, &size) in offsets.iter().zip(&blocks) {
        states.push(echelon_block(&sub_block(n_mat, at, size), rank_tol)?);
    }
    let max_steps = n * n;
    let mut k = 1;
    loop {
        if k >= schedule.len() {
            return Err(JordanError::InvalidArgument(format!("schedule has only {} entries", schedule.len())));
        }
        let ln_thr = schedule.ln_threshold(k, eps);
        let any_small = states.iter().any(|st| st.pivots.iter().any(|p| ln0(p.value.norm()) <= ln_thr));
        if !any_small {
            break;
        }
        for st in states.iter_mut() {
            let mut fk = linalg::zeros(st.a.nrows());
            for p in &st.pivots {
                if ln0(p.value.norm()) <= ln_thr {
                    fk[(p.row, p.col)] = p.value;
                }
            }
            let reduced = &st.a - &fk;
            let next = echelon_block(&reduced, rank_tol)?;
            let u = &next.v;
            st.fp = u.adjoint() * (&st.fp + &fk) * u + &next.fp;
            st.v = &st.v * u;
            st.a = next.a;
            st.pivots = next.pivots;
        }
        k += 1;
        if k > max_steps {
            return Err(JordanError::NonConvergence { steps: max_steps });
        }
    }

    let mut warnings = Vec::new();
    if 2 * k > n * n {
        warnings.push(format!("k_used = {k} exceeds n^2/2 = {}", n * n / 2));
    }
    let mut inequalities = Vec::new();
    for i in 1..k {
        let check = schedule.summability(i, eps);
        if !check.pass {
            return Err(JordanError::ScheduleViolated { k: i, lhs: check.lhs, rhs: check.rhs });
        }
        inequalities.push(check);
    }

    let ln_delta_k = schedule.ln_threshold(k, eps);
    let mut s_blocks = Vec::new();
    let mut s_inv_blocks = Vec::new();
    let mut a_blocks = Vec::new();
    let mut f_blocks = Vec::new();
    for st in &states {
        let sc = scale_matrix_pivots(&st.a, &st.pivots, ln_delta_k)?;
        let scaled = &sc.s_inv * &st.a * &sc.s;
        // Rounding of the pivots to exactly 1 goes into F.
        let f = &sc.s_inv * &st.fp * &sc.s + (scaled - &sc.reduced);
        s_blocks.push(&st.v * &sc.s);
        s_inv_blocks.push(&sc.s_inv * st.v.adjoint());
        a_blocks.push(sc.reduced);
        f_blocks.push(f);
    }
    let s = linalg::block_diag(&s_blocks);
    let s_inv = linalg::block_diag(&s_inv_blocks);
    let f = linalg::block_diag(&f_blocks);
    let a_prime = linalg::block_diag(&a_blocks);

    // Estimates with C = 1.
    let na = linalg::norm(n_mat);
    let ln_prev = if k == 1 { eps.ln() } else { schedule.ln_threshold(k - 1, eps) };
    // max(1, ·) as in the scaling bound: with C = 1 the raw base is false for small ‖N‖.
    let ln_base = ln_add(ln0(na), 2f64.ln() + ln_prev).max(0.0);
    let nf = n as f64;
    let ln_s = ln0(linalg::norm(&s)).max(ln0(linalg::norm(&s_inv)));
    inequalities.push(Inequality::le("echelon step ‖S^±1‖ bound (ln)", ln_s, nf / 2.0 * ln_base - nf / 2.0 * ln_delta_k));
    inequalities.push(Inequality::le(
        "echelon step ‖F‖ bound (ln)",
        ln0(linalg::norm(&f)),
        nf * ln_base - nf * ln_delta_k + ln_prev,
    ));
    Ok(EchelonIterate { s, s_inv, a_prime, f, k_used: k, inequalities, warnings })
}

/// Conjugation of a block-diagonal reduced echelon matrix to Jordan form.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedToJordan {
    pub s: CMat,
    pub s_inv: CMat,
    pub j: CMat,
    pub transvections: usize,
    /// `ln((1+‖A‖)^{n!})`.
    pub ln_bound: f64,
}

fn reduce_block(a_in: &CMat) -> Result<(CMat, CMat, CMat, usize)> {
    let b = a_in.nrows();
    let pivots = read_pivots(a_in)?;
    let mut a = a_in.clone();
    for p in &pivots {
        if (p.value - c(1.0, 0.0)).norm() > PATTERN_TOL {
            return Err(JordanError::NonUnitPivot { col: p.col, value: p.value });
        }
        a[(p.row, p.col)] = c(1.0, 0.0);
    }
    let mut s = linalg::eye(b);
    let mut s_inv = linalg::eye(b);
    let mut count = 0;
    let pivot_row: Vec<Option<usize>> = (0..b).map(|col| pivots.iter().find(|p| p.col == col).map(|p| p.row)).collect();
    for j0 in (0..b).rev() {
        let Some(i0) = pivot_row[j0] else { continue };
        while let Some(k0) = (0..i0).rev().find(|&r| a[(r, j0)] != c(0.0, 0.0)) {
            let x = a[(k0, j0)];
            // A <- (I - xE_{k0,i0}) A (I + xE_{k0,i0}).
            for r in 0..b {
                let v = a[(r, k0)];
                a[(r, i0)] += x * v;
                let w = s[(r, k0)];
                s[(r, i0)] += x * w;
            }
            for col in 0..b {
                let v = a[(i0, col)];
                a[(k0, col)] -= x * v;
                let w = s_inv[(i0, col)];
                s_inv[(k0, col)] -= x * w;
            }
            a[(k0, j0)] = c(0.0, 0.0);
            count += 1;
        }
    }
    // Chains e_top -> e_{p(top)} -> ... -> e_end become Jordan blocks.
    let is_target: Vec<bool> = (0..b).map(|r| pivot_row.iter().any(|p| *p == Some(r))).collect();
    let mut chains: Vec<Vec<usize>> = Vec::new();
    for top in 0..b {
        if is_target[top] {
            continue;
        }
        let mut chain = vec![top];
        let mut cur = top;
        while let Some(r) = pivot_row[cur] {
            chain.push(r);
            cur = r;
        }
        chain.reverse();
        chains.push(chain);
    }
    chains.sort_by(|x, y| y.len().cmp(&x.len()).then(x[0].cmp(&y[0])));
    let order: Vec<usize> = chains.concat();
    if order.len() != b {
        return Err(JordanError::NotEchelon("pivot pattern is not a union of chains".into()));
    }
    let perm = CMat::from_fn(b, b, |i, j| if i == order[j] { c(1.0, 0.0) } else { c(0.0, 0.0) });
    let j = perm.transpose() * &a * &perm;
    Ok((s * &perm, perm.transpose() * s_inv, j, count))
}

/// Removes the entries above the pivots column by column from the right
/// (transvections `B = (I − aM)A(I + aM)`), then orders the resulting chains
/// into Jordan blocks of decreasing size.
pub fn reduced_to_jordan(a: &CMat, blocks: &[usize]) -> Result<ReducedToJordan> {
    let n = check_square(a)?;
    let blocks = check_blocks(n, blocks)?;
    let offsets = block_offsets(&blocks);
    let (mut ss, mut si, mut js) = (Vec::new(), Vec::new(), Vec::new());
    let mut count = 0;
    for (&at, &size) in offsets.iter().zip(&blocks) {
        let (s, s_inv, j, t) = reduce_block(&sub_block(a, at, size))?;
        ss.push(s);
        si.push(s_inv);
        js.push(j);
        count += t;
    }
    let ln_bound = ln_factorial(n).exp() * (1.0 + linalg::norm(a)).ln();
    Ok(ReducedToJordan {
        s: linalg::block_diag(&ss),
        s_inv: linalg::block_diag(&si),
        j: linalg::block_diag(&js),
        transvections: count,
        ln_bound,
    })
}

/// Options for [`nilpotent_jnf`].
#[derive(Clone, Debug, PartialEq)]
pub struct JnfOptions {
    pub rank_tol: f64,
    /// The unspecified constant `C` of the estimates.
    pub constant: f64,
    pub schedule: Option<DeltaSchedule>,
}

impl Default for JnfOptions {
    fn default() -> Self {
        JnfOptions { rank_tol: DEFAULT_RANK_TOL, constant: 1.0, schedule: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JordanCertificate {
    pub s: CMat,
    pub s_inv: CMat,
    pub j: CMat,
    pub f_residual: CMat,
    /// `ln(C(‖N‖+1)^c ε^{-1/(2(m+2))})`.
    pub ln_bound_s: f64,
    /// `ln((C(‖N‖+1)^c)^{m+1} ε^{c'})`.
    pub ln_bound_f: f64,
    pub epsilon: f64,
    pub m: usize,
    pub k_used: usize,
    /// `‖S^{-1}NS − J − F'‖`.
    pub identity_residual: f64,
    pub inequalities: Vec<Inequality>,
    pub warnings: Vec<String>,
}

/// Jordan normal form of a nilpotent block-diagonal `N` up to a perturbation
/// `F'`, with the estimates `‖S^{±1}‖ ≤ C(‖N‖+1)^c ε^{-1/(2(m+2))}` and
/// `‖S^{±1}‖^m ‖F'‖ ≤ (C(‖N‖+1)^c)^{m+1} ε^{c'}`, `c = c_n`, `c' = (m+1)c_n δ_k`.
pub fn nilpotent_jnf(n_mat: &CMat, blocks: &[usize], eps: f64, m: usize, opts: &JnfOptions) -> Result<JordanCertificate> {
    let n = check_square(n_mat)?;
    let blocks = check_blocks(n, blocks)?;
    if m == 0 {
        return Err(JordanError::InvalidArgument("m must be at least 1".into()));
    }
    let schedule = opts.schedule.clone().unwrap_or_else(|| DeltaSchedule::standard(n, m, n * n + 2));
    let ln_c = opts.constant.ln();
    let nn = linalg::norm(n_mat);
    let c_n = schedule.ln_c_n.exp();
    let ln_base = ln_c + c_n * nn.ln_1p();
    let ln_bound_s = ln_base - eps.ln() / (2.0 * (m as f64 + 2.0));

    let ech = echelonize_iterate(n_mat, &blocks, eps, &schedule, opts.rank_tol)?;
    let red = reduced_to_jordan(&ech.a_prime, &blocks)?;
    let s = &ech.s * &red.s;
    let s_inv = &red.s_inv * &ech.s_inv;
    let f_residual = &red.s_inv * &ech.f * &red.s;
    let identity_residual = linalg::norm(&(&s_inv * n_mat * &s - &red.j - &f_residual));

    let k = ech.k_used;
    let ln_c_prime = ((m + 1) as f64).ln() + schedule.ln_c_n + schedule.ln_delta[k];
    let ln_bound_f = (m as f64 + 1.0) * ln_base + ln_c_prime.exp() * eps.ln();
    let ln_s = ln0(linalg::norm(&s)).max(ln0(linalg::norm(&s_inv)));
    let ln_f = ln0(linalg::norm(&f_residual));

    let mut inequalities = ech.inequalities.clone();
    inequalities.push(Inequality::le("reduced-to-Jordan S (ln)", ln0(linalg::norm(&red.s)).max(ln0(linalg::norm(&red.s_inv))), ln_c + red.ln_bound));
    inequalities.push(Inequality::le("‖S^±1‖ <= C(‖N‖+1)^c ε^(-1/(2(m+2))) (ln)", ln_s, ln_bound_s));
    inequalities.push(Inequality::le("‖S^±1‖^m ‖F′‖ <= (C(‖N‖+1)^c)^(m+1) ε^c′ (ln)", m as f64 * ln_s + ln_f, ln_bound_f));
    inequalities.push(Inequality::lt("identity residual", identity_residual, 1e-10 * nn.max(f64::MIN_POSITIVE)));
    Ok(JordanCertificate {
        s,
        s_inv,
        j: red.j,
        f_residual,
        ln_bound_s,
        ln_bound_f,
        epsilon: eps,
        m,
        k_used: k,
        identity_residual,
        inequalities,
        warnings: ech.warnings,
    })
}

/// `rank(A^k)` for `k = 1..n`, singular values counted above `tol·‖A‖^k`.
pub fn jordan_structure(a: &CMat, tol: f64) -> Vec<usize> {
    let n = a.nrows();
    let scale = linalg::norm(a);
    let mut out = Vec::with_capacity(n);
    let mut p = linalg::eye(n);
    for k in 1..=n {
        p = &p * a;
        if scale == 0.0 {
            out.push(0);
        } else {
            out.push(linalg::rank_abs(&p, tol * scale.powi(k as i32)));
        }
    }
    out
}

/// Jordan block sizes (descending) of a nilpotent matrix from its rank sequence.
pub fn block_sizes_from_ranks(n: usize, ranks: &[usize]) -> Vec<usize> {
    // Number of blocks of size ≥ k is rank(A^{k-1}) − rank(A^k).
    let r = |k: usize| if k == 0 { n } else { ranks.get(k - 1).copied().unwrap_or(0) };
    let mut sizes = Vec::new();
    for k in 1..=n {
        let at_least_k = r(k - 1) - r(k);
        let at_least_next = r(k) - r(k + 1);
        for _ in 0..(at_least_k - at_least_next) {
            sizes.push(k);
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    GuaranteedEqual,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureComparison {
    pub verdict: Verdict,
    /// `‖AC − CB‖`.
    pub epsilon: f64,
    /// `1/(n·n!·ξ^n)`.
    pub threshold: f64,
    pub ln_threshold: f64,
    pub ranks_a: Vec<usize>,
    pub ranks_b: Vec<usize>,
    pub ranks_equal: bool,
}

/// Structure comparison of two nilpotent Jordan forms intertwined by `C`.
pub fn same_structure(a: &CMat, b: &CMat, cm: &CMat, xi: f64) -> Result<StructureComparison> {
    let n = check_square(a)?;
    if b.shape() != a.shape() || cm.shape() != a.shape() {
        return Err(JordanError::InvalidArgument("A, B, C must have the same shape".into()));
    }
    let c_inv = linalg::inverse(cm).ok_or(JordanError::SingularConjugation)?;
    let norm = linalg::norm(cm).max(linalg::norm(&c_inv));
    if norm > xi {
        return Err(JordanError::XiTooSmall { xi, norm });
    }
    let epsilon = linalg::norm(&(a * cm - cm * b));
    let ln_threshold = -((n as f64).ln() + ln_factorial(n) + n as f64 * xi.ln());
    let verdict = if ln0(epsilon) < ln_threshold { Verdict::GuaranteedEqual } else { Verdict::Inconclusive };
    let ranks_a = jordan_structure(a, DEFAULT_RANK_TOL);
    let ranks_b = jordan_structure(b, DEFAULT_RANK_TOL);
    Ok(StructureComparison {
        verdict,
        epsilon,
        threshold: ln_threshold.exp(),
        ln_threshold,
        ranks_equal: ranks_a == ranks_b,
        ranks_a,
        ranks_b,
    })
}

/// One Jordan block inside a matrix in Jordan normal form.
#[derive(Clone, Debug, PartialEq)]
pub struct JordanBlock {
    pub start: usize,
    pub size: usize,
    pub lambda: C64,
}

/// Splits a Jordan-form matrix into its blocks; fails if the pattern is not Jordan.
pub fn jordan_blocks(j: &CMat, tol: f64) -> Result<Vec<JordanBlock>> {
    let n = check_square(j)?;
    for r in 0..n {
        for col in 0..n {
            let z = j[(r, col)];
            if col == r + 1 {
                let one = (z - c(1.0, 0.0)).norm() <= tol;
                if !(one || z.norm() <= tol) {
                    return Err(JordanError::NotJordan(format!("superdiagonal entry ({r}, {col}) = {z}")));
                }
                if one && (j[(r, r)] - j[(col, col)]).norm() > tol {
                    return Err(JordanError::NotJordan(format!("1 at ({r}, {col}) joins different eigenvalues")));
                }
            } else if col != r && z.norm() > tol {
                return Err(JordanError::NotJordan(format!("entry ({r}, {col}) = {z}")));
            }
        }
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut size = 1;
        while start + size < n && (j[(start + size - 1, start + size)] - c(1.0, 0.0)).norm() <= tol {
            size += 1;
        }
        out.push(JordanBlock { start, size, lambda: j[(start, start)] });
        start += size;
    }
    Ok(out)
}

pub fn is_jordan_form(j: &CMat, tol: f64) -> bool {
    jordan_blocks(j, tol).is_ok()
}

/// Unitary `P` with `P* J P = R` real: conjugate block pairs are interleaved and
/// rotated by `C = (1/√2)[[1, −i], [1, i]]`; real blocks are untouched.
pub fn realify_jordan(j: &CMat, tol: f64) -> Result<(CMat, CMat)> {
    let n = check_square(j)?;
    let blocks = jordan_blocks(j, PATTERN_TOL.max(tol))?;
    let is_real = |z: C64| z.im.abs() <= tol * (1.0 + z.norm());
    let mut used = vec![false; blocks.len()];
    let mut columns: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(n);
    let e = |i: usize| {
        let mut v = nalgebra::DVector::from_element(n, c(0.0, 0.0));
        v[i] = c(1.0, 0.0);
        v
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for (bi, b) in blocks.iter().enumerate() {
        if used[bi] {
            continue;
        }
        used[bi] = true;
        if is_real(b.lambda) {
            for i in 0..b.size {
                columns.push(e(b.start + i));
            }
            continue;
        }
        let target = b.lambda.conj();
        let partner = (0..blocks.len())
            .find(|&o| !used[o] && blocks[o].size == b.size && (blocks[o].lambda - target).norm() <= tol * (1.0 + target.norm()));
        let Some(o) = partner else {
            let any = blocks.iter().enumerate().any(|(o, x)| !used[o] && (x.lambda - target).norm() <= tol * (1.0 + target.norm()));
            return Err(if any { JordanError::StructureMismatch(b.lambda) } else { JordanError::NotConjugationStable(b.lambda) });
        };
        used[o] = true;
        let p = &blocks[o];
        for i in 0..b.size {
            let (x, y) = (e(b.start + i), e(p.start + i));
            // Columns of diag(C) after the interleaving permutation.
            columns.push((&x + &y) * c(h, 0.0));
            columns.push((&x * c(0.0, -h)) + (&y * c(0.0, h)));
        }
    }
    let pm = CMat::from_columns(&columns);
    let full = pm.adjoint() * j * &pm;
    let r = full.map(|z| c(z.re, 0.0));
    if linalg::norm(&(&full - &r)) > 1e-12 * (1.0 + linalg::norm(j)) {
        return Err(JordanError::NotConjugationStable(blocks[0].lambda));
    }
    Ok((pm, r))
}
