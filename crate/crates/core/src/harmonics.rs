//! Matrix-valued trigonometric polynomials on the torus `T^d = R^d / Z^d`.
//!
//! A [`TrigPoly`] is a finite map from lattice modes `k` to `n x n` complex
//! coefficients, representing `P(θ) = Σ_k P̂(k) e^{2iπ⟨k,θ⟩}`. `|k|` is the ℓ¹
//! norm everywhere. Exactly zero coefficients are never stored, so `degree`
//! is the largest stored `|k|`.
//!
//! The derivative along a frequency vector `ω` multiplies mode `k` by
//! `2iπ⟨k,ω⟩`; the small-divisor solvers divide by the same factor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, c, CMat, C64};

/// Hard floor on any divisor used by the Fourier solvers.
pub const DIVISOR_FLOOR: f64 = 1e-14;

pub type Mode = Vec<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicsError {
    #[error("frequency vector is empty")]
    EmptyOmega,
    #[error("frequency vector has a non-finite entry")]
    NonFinite,
    #[error("invalid Diophantine parameters: kappa={kappa}, tau={tau}, d={d}")]
    BadParameters { kappa: f64, tau: f64, d: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular at grid point θ={theta:?}: |det|={det:e}")]
    SingularAtGridPoint { theta: Vec<f64>, det: f64 },
    #[error("near-resonant mode k={k:?}: |divisor|={divisor:e}")]
    NearResonant { k: Mode, divisor: f64 },
    #[error("divisor below rho at k={k:?}: |divisor|={defect:e} < {rho:e}")]
    BelowRho { k: Mode, defect: f64, rho: f64 },
    #[error("Diophantine condition fails at k={k:?}")]
    NotDiophantine { k: Mode },
}

pub type Result<T> = std::result::Result<T, HarmonicsError>;

/// Frequency vector `ω` with Diophantine parameters `(κ, τ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    pub kappa: f64,
    pub tau: f64,
}

impl FrequencyVector {
    pub fn new(omega: Vec<f64>, kappa: f64, tau: f64) -> Result<Self> {
        if omega.is_empty() {
            return Err(HarmonicsError::EmptyOmega);
        }
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(HarmonicsError::NonFinite);
        }
        let d = omega.len();
        if !(kappa > 0.0) || !(tau > d as f64 - 1.0) || !tau.is_finite() {
            return Err(HarmonicsError::BadParameters { kappa, tau, d });
        }
        Ok(FrequencyVector { omega, kappa, tau })
    }

    /// `(1, φ, ...)` truncated to `d` entries with the given parameters.
    pub fn golden(d: usize, kappa: f64, tau: f64) -> Result<Self> {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let base = [1.0, phi, phi * phi - 0.5];
        Self::new(base.iter().copied().take(d.max(1)).collect(), kappa, tau)
    }

    pub fn d(&self) -> usize {
        self.omega.len()
    }

    pub fn dot(&self, k: &[i64]) -> f64 {
        dot(k, &self.omega)
    }

    /// `ω/2`, which lies in `DC(κ/2, τ)` whenever `ω ∈ DC(κ, τ)`.
    pub fn half(&self) -> Self {
        FrequencyVector {
            omega: self.omega.iter().map(|x| x / 2.0).collect(),
            kappa: self.kappa / 2.0,
            tau: self.tau,
        }
    }

    pub fn check(&self, k_check: usize) -> Result<DiophantineReport> {
        check_diophantine(&self.omega, self.kappa, self.tau, k_check)
    }
}

pub fn dot(k: &[i64], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum()
}

pub fn l1(k: &[i64]) -> i64 {
    k.iter().map(|x| x.abs()).sum()
}

/// All `k ∈ Z^d` with `|k|₁ ≤ radius`, in lexicographic order.
pub fn l1_ball(d: usize, radius: usize) -> Vec<Mode> {
    fn rec(d: usize, left: i64, prefix: &mut Mode, out: &mut Vec<Mode>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        for x in -left..=left {
            prefix.push(x);
            rec(d, left - x.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, radius as i64, &mut Vec::with_capacity(d), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub worst_k: Mode,
    /// `min |⟨k,ω⟩|·|k|^τ / κ` over the scanned ball.
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Scans `0 < |k|₁ ≤ k_check` for the worst Diophantine ratio.
///
/// Only one of `±k` is visited (first nonzero entry positive); ties keep the
/// first mode in (|k|, lexicographic) order.
pub fn check_diophantine(omega: &[f64], kappa: f64, tau: f64, k_check: usize) -> Result<DiophantineReport> {
    if omega.is_empty() {
        return Err(HarmonicsError::EmptyOmega);
    }
    if omega.iter().any(|x| !x.is_finite()) || !kappa.is_finite() || !tau.is_finite() {
        return Err(HarmonicsError::NonFinite);
    }
    let d = omega.len();
    let mut best: Option<(f64, Mode)> = None;
    let mut ball = l1_ball(d, k_check.max(1));
    ball.sort_by_key(|k| l1(k));
    for k in ball {
        let first = k.iter().find(|&&x| x != 0);
        if first.map_or(true, |&x| x < 0) {
            continue;
        }
        let nk = l1(&k) as f64;
        let ratio = dot(&k, omega).abs() * nk.powf(tau) / kappa;
        if best.as_ref().map_or(true, |(b, _)| ratio < *b) {
            best = Some((ratio, k));
        }
    }
    let (worst_ratio, worst_k) = best.expect("ball contains a nonzero mode");
    Ok(DiophantineReport { worst_k, worst_ratio, pass: worst_ratio >= 1.0 })
}

/// Matrix-valued trigonometric polynomial on `T^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    d: usize,
    n: usize,
    modes: BTreeMap<Mode, CMat>,
}

impl TrigPoly {
    pub fn zero(d: usize, n: usize) -> Self {
        TrigPoly { d, n, modes: BTreeMap::new() }
    }

    pub fn constant(d: usize, m: CMat) -> Self {
        let mut p = TrigPoly::zero(d, m.nrows());
        p.set(vec![0; d], m);
        p
    }

    pub fn identity(d: usize, n: usize) -> Self {
        TrigPoly::constant(d, linalg::eye(n))
    }

    /// Single mode `m·e^{2iπ⟨k,θ⟩}`.
    pub fn monomial(k: Mode, m: CMat) -> Self {
        let mut p = TrigPoly::zero(k.len(), m.nrows());
        p.set(k, m);
        p
    }

    /// Scalar (1x1) single mode.
    pub fn scalar_monomial(k: Mode, z: C64) -> Self {
        TrigPoly::monomial(k, CMat::from_element(1, 1, z))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modes(&self) -> impl Iterator<Item = (&Mode, &CMat)> {
        self.modes.iter()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn coeff(&self, k: &[i64]) -> CMat {
        self.modes.get(k).cloned().unwrap_or_else(|| linalg::zeros(self.n))
    }

    pub fn coeff_ref(&self, k: &[i64]) -> Option<&CMat> {
        self.modes.get(k)
    }

    /// Sets a coefficient; an exactly zero matrix removes the mode.
    pub fn set(&mut self, k: Mode, m: CMat) {
        assert_eq!(k.len(), self.d, "mode dimension");
        assert_eq!((m.nrows(), m.ncols()), (self.n, self.n), "coefficient shape");
        if m.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
            self.modes.remove(&k);
        } else {
            self.modes.insert(k, m);
        }
    }

    pub fn add_to(&mut self, k: Mode, m: &CMat) {
        let cur = self.coeff(&k);
        self.set(k, cur + m);
    }

    pub fn degree(&self) -> usize {
        self.modes.keys().map(|k| l1(k) as usize).max().unwrap_or(0)
    }

    pub fn mean(&self) -> CMat {
        self.coeff(&vec![0; self.d])
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    fn same_shape(&self, other: &TrigPoly) -> Result<()> {
        if self.d != other.d || self.n != other.n {
            return Err(HarmonicsError::Dimension(format!(
                "(d={}, n={}) vs (d={}, n={})",
                self.d, self.n, other.d, other.n
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &TrigPoly) -> Result<TrigPoly> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (k, m) in &other.modes {
            out.add_to(k.clone(), m);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &TrigPoly) -> Result<TrigPoly> {
        self.add(&other.scale(c(-1.0, 0.0)))
    }

    pub fn scale(&self, z: C64) -> TrigPoly {
        self.map_coeffs(|m| m * z)
    }

    pub fn map_coeffs(&self, f: impl Fn(&CMat) -> CMat) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            out.set(k.clone(), f(m));
        }
        out
    }

    /// Fourier convolution `P·Q`.
    pub fn mul(&self, other: &TrigPoly) -> Result<TrigPoly> {
        self.same_shape(other)?;
        let mut acc: BTreeMap<Mode, CMat> = BTreeMap::new();
        for (k1, a) in &self.modes {
            for (k2, b) in &other.modes {
                let k: Mode = k1.iter().zip(k2).map(|(x, y)| x + y).collect();
                let prod = a * b;
                acc.entry(k).and_modify(|m| *m += &prod).or_insert(prod);
            }
        }
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in acc {
            out.set(k, m);
        }
        Ok(out)
    }

    /// `M·P` for a constant matrix `M`.
    pub fn left_mul(&self, m: &CMat) -> TrigPoly {
        self.map_coeffs(|a| m * a)
    }

    /// `P·M` for a constant matrix `M`.
    pub fn right_mul(&self, m: &CMat) -> TrigPoly {
        self.map_coeffs(|a| a * m)
    }

    /// Scalar polynomial `s` (n = 1) times `P`.
    pub fn scalar_mul(&self, s: &TrigPoly) -> Result<TrigPoly> {
        if s.n != 1 || s.d != self.d {
            return Err(HarmonicsError::Dimension("scalar factor must be 1x1 on the same torus".into()));
        }
        let mut lifted = TrigPoly::zero(self.d, self.n);
        for (k, m) in &s.modes {
            lifted.set(k.clone(), linalg::eye(self.n) * m[(0, 0)]);
        }
        lifted.mul(self)
    }

    /// Pointwise complex conjugate `θ ↦ conj(P(θ))`: mode `k` becomes `conj(P̂(−k))`.
    pub fn conj(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            out.set(k.iter().map(|x| -x).collect(), linalg::conj(m));
        }
        out
    }

    /// Pointwise real part `(P + P̄)/2`.
    pub fn re_part(&self) -> TrigPoly {
        self.add(&self.conj()).expect("same shape").scale(c(0.5, 0.0))
    }

    /// Pointwise imaginary part `(P − P̄)/(2i)`.
    pub fn im_part(&self) -> TrigPoly {
        self.sub(&self.conj()).expect("same shape").scale(c(0.0, -0.5))
    }

    /// Exact reality predicate: `P̂(−k) = conj(P̂(k))` bit for bit.
    pub fn is_real(&self) -> bool {
        self.modes.iter().all(|(k, m)| {
            let neg: Mode = k.iter().map(|x| -x).collect();
            match self.modes.get(&neg) {
                Some(o) => o.iter().zip(m.iter()).all(|(a, b)| a.re == b.re && a.im == -b.im),
                None => false,
            }
        })
    }

    /// Forces exact real symmetry by averaging each `±k` pair.
    pub fn symmetrize_real(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        let keys: Vec<Mode> = self.modes.keys().cloned().collect();
        let mut all = keys.clone();
        all.extend(keys.iter().map(|k| k.iter().map(|x| -x).collect::<Mode>()));
        all.sort();
        all.dedup();
        for k in all {
            let neg: Mode = k.iter().map(|x| -x).collect();
            if k < neg {
                let a = self.coeff(&k);
                let b = linalg::conj(&self.coeff(&neg));
                let m = (a + b) * c(0.5, 0.0);
                out.set(neg, linalg::conj(&m));
                out.set(k, m);
            } else if k == neg {
                out.set(k.clone(), self.coeff(&k).map(|z| c(z.re, 0.0)));
            }
        }
        out
    }

    pub fn trace(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, 1);
        for (k, m) in &self.modes {
            out.set(k.clone(), CMat::from_element(1, 1, m.trace()));
        }
        out
    }

    pub fn adjoint_pointwise(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            out.set(k.iter().map(|x| -x).collect(), m.adjoint());
        }
        out
    }

    pub fn eval(&self, theta: &[f64]) -> CMat {
        let mut out = linalg::zeros(self.n);
        for (k, m) in &self.modes {
            let ph = 2.0 * std::f64::consts::PI * dot(k, theta);
            out += m * C64::from_polar(1.0, ph);
        }
        out
    }

    /// Values on the uniform grid with `g` points per dimension, in the order of [`grid_indices`].
    pub fn eval_grid(&self, g: usize) -> Vec<CMat> {
        let n = self.n;
        let total = g.pow(self.d as u32);
        let mut planes = vec![vec![C64::new(0.0, 0.0); total]; n * n];
        for (k, m) in &self.modes {
            let idx = flat_index(k, g);
            for a in 0..n {
                for b in 0..n {
                    planes[a * n + b][idx] += m[(a, b)];
                }
            }
        }
        for p in planes.iter_mut() {
            dft_nd(p, self.d, g, true);
        }
        (0..total).map(|i| CMat::from_fn(n, n, |a, b| planes[a * n + b][i])).collect()
    }

    /// `∂_ω P`: mode `k` times `2iπ⟨k,ω⟩`.
    pub fn derivative(&self, omega: &[f64]) -> Result<TrigPoly> {
        if omega.len() != self.d {
            return Err(HarmonicsError::Dimension(format!("ω has {} entries, P.d = {}", omega.len(), self.d)));
        }
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            let f = c(0.0, 2.0 * std::f64::consts::PI * dot(k, omega));
            out.set(k.clone(), m * f);
        }
        Ok(out)
    }

    /// Partial derivative `∂^α` in the torus coordinates.
    pub fn partial(&self, alpha: &[usize]) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            let mut f = c(1.0, 0.0);
            for (kj, &aj) in k.iter().zip(alpha) {
                f *= c(0.0, 2.0 * std::f64::consts::PI * *kj as f64).powu(aj as u32);
            }
            out.set(k.clone(), m * f);
        }
        out
    }

    /// Drops modes with `|k|₁ > n_max`; kept modes are untouched.
    pub fn truncate(&self, n_max: usize) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            if l1(k) as usize <= n_max {
                out.modes.insert(k.clone(), m.clone());
            }
        }
        out
    }

    /// `θ ↦ P(2θ)`: mode `k` moves to `2k`.
    pub fn double_angle(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.d, self.n);
        for (k, m) in &self.modes {
            out.modes.insert(k.iter().map(|x| 2 * x).collect(), m.clone());
        }
        out
    }

    /// Largest coefficient norm over modes with `|k| > n_max` summed: `Σ_{|k|>N} ‖P̂(k)‖`.
    pub fn tail_sum(&self, n_max: usize) -> f64 {
        self.modes.iter().filter(|(k, _)| l1(k) as usize > n_max).map(|(_, m)| linalg::norm(m)).sum()
    }
}

/// Multi-indices of the uniform grid with `g` points per dimension.
pub fn grid_indices(d: usize, g: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * g);
        for p in &out {
            for j in 0..g {
                let mut q = p.clone();
                q.push(j);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

pub fn grid_theta(j: &[usize], g: usize) -> Vec<f64> {
    j.iter().map(|&x| x as f64 / g as f64).collect()
}

/// Row-major position of `k mod g` in a `g^d` grid array.
fn flat_index(k: &[i64], g: usize) -> usize {
    k.iter().fold(0, |acc, &x| acc * g + x.rem_euclid(g as i64) as usize)
}

/// Unnormalized DFT along every axis of a row-major `g^d` array; `inverse`
/// uses the `e^{+2iπ}` sign.
fn dft_nd(data: &mut [C64], d: usize, g: usize, inverse: bool) {
    let mut planner = rustfft::FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(g) } else { planner.plan_fft_forward(g) };
    let mut line = vec![C64::new(0.0, 0.0); g];
    for axis in 0..d {
        let stride = g.pow((d - 1 - axis) as u32);
        for start in 0..data.len() {
            if (start / stride) % g != 0 {
                continue;
            }
            for t in 0..g {
                line[t] = data[start + t * stride];
            }
            fft.process(&mut line);
            for t in 0..g {
                data[start + t * stride] = line[t];
            }
        }
    }
}

/// Default grid size for norms: `4·degree + 1`, at least 16.
pub fn default_grid(degree: usize) -> usize {
    (4 * degree + 1).max(16)
}

/// Discrete Fourier interpolation of samples on the `g^d` grid, keeping `|k| ≤ out_degree`.
pub fn interpolate(d: usize, n: usize, g: usize, out_degree: usize, values: &[CMat]) -> TrigPoly {
    let total = g.pow(d as u32);
    assert_eq!(total, values.len());
    let mut planes = vec![vec![C64::new(0.0, 0.0); total]; n * n];
    for (i, v) in values.iter().enumerate() {
        for a in 0..n {
            for b in 0..n {
                planes[a * n + b][i] = v[(a, b)];
            }
        }
    }
    for p in planes.iter_mut() {
        dft_nd(p, d, g, false);
    }
    let weight = 1.0 / total as f64;
    let mut out = TrigPoly::zero(d, n);
    for k in l1_ball(d, out_degree) {
        let idx = flat_index(&k, g);
        out.set(k, CMat::from_fn(n, n, |a, b| planes[a * n + b][idx] * weight));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    FourierBound,
    GridSup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub c0: f64,
    pub cr: BTreeMap<usize, f64>,
    pub method: NormMethod,
}

fn multi_indices(d: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=r {
        let mut acc = vec![vec![]];
        for slot in 0..d {
            let mut next = Vec::new();
            for p in &acc {
                let used: usize = p.iter().sum();
                if slot + 1 == d {
                    if used <= total {
                        let mut q = p.clone();
                        q.push(total - used);
                        next.push(q);
                    }
                } else {
                    for a in 0..=(total - used) {
                        let mut q = p.clone();
                        q.push(a);
                        next.push(q);
                    }
                }
            }
            acc = next;
        }
        out.extend(acc);
    }
    out
}

/// `C^r` norm: `max_{|α|≤r} sup_θ ‖∂^α P(θ)‖`.
///
/// `GridSup` samples on `grid` points per dimension (default [`default_grid`]).
/// `FourierBound` returns `Σ_k max(1, 2π|k|)^r ‖P̂(k)‖`, an upper bound of the
/// true norm (the `max(1, ·)` keeps the `α = 0` term covered for `r > 0`).
pub fn cr_norm(p: &TrigPoly, r: usize, method: NormMethod, grid: Option<usize>) -> f64 {
    match method {
        NormMethod::FourierBound => p
            .modes()
            .map(|(k, m)| {
                let w = (2.0 * std::f64::consts::PI * l1(k) as f64).max(1.0).powi(r as i32);
                w * linalg::norm(m)
            })
            .sum(),
        NormMethod::GridSup => {
            let g = grid.unwrap_or_else(|| default_grid(p.degree()));
            let mut best: f64 = 0.0;
            for alpha in multi_indices(p.d(), r) {
                let dp = p.partial(&alpha);
                if dp.is_zero() {
                    continue;
                }
                for v in dp.eval_grid(g) {
                    best = best.max(linalg::norm(&v));
                }
            }
            best
        }
    }
}

pub fn norm_report(p: &TrigPoly, r_max: usize, method: NormMethod, grid: Option<usize>) -> NormReport {
    let cr = (0..=r_max).map(|r| (r, cr_norm(p, r, method, grid))).collect::<BTreeMap<_, _>>();
    NormReport { c0: cr[&0], cr, method }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseCertificate {
    pub max_grid_error: f64,
    pub min_abs_det: f64,
    pub aliasing_warning: bool,
}

/// Fourier interpolation of `θ ↦ P(θ)^{-1}` from a `grid_per_dim^d` grid, truncated to `out_degree`.
pub fn invert_on_grid(
    p: &TrigPoly,
    grid_per_dim: usize,
    out_degree: usize,
    det_tol: f64,
) -> Result<(TrigPoly, InverseCertificate)> {
    let idx = grid_indices(p.d(), grid_per_dim);
    let vals = p.eval_grid(grid_per_dim);
    let mut inv = Vec::with_capacity(vals.len());
    let mut min_det = f64::INFINITY;
    for (j, v) in idx.iter().zip(&vals) {
        let det = v.determinant().norm();
        min_det = min_det.min(det);
        let iv = if det > det_tol { linalg::inverse(v) } else { None };
        match iv {
            Some(m) => inv.push(m),
            None => return Err(HarmonicsError::SingularAtGridPoint { theta: grid_theta(j, grid_per_dim), det }),
        }
    }
    let q = interpolate(p.d(), p.n(), grid_per_dim, out_degree, &inv);
    let qv = q.eval_grid(grid_per_dim);
    let eye = linalg::eye(p.n());
    let err = vals.iter().zip(&qv).map(|(a, b)| linalg::norm(&(a * b - &eye))).fold(0.0, f64::max);
    let cert = InverseCertificate {
        max_grid_error: err,
        min_abs_det: min_det,
        aliasing_warning: grid_per_dim < 2 * (p.degree() + out_degree) + 1,
    };
    Ok((q, cert))
}

/// Solution of `∂_ω g = f − f̂(0)` with its certificate values.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallDivisorSolution {
    pub g: TrigPoly,
    /// `(1/2πκ) Σ_{k≠0} |k|^τ ‖f̂(k)‖`.
    pub bound: f64,
    /// Fourier-bound `C^0` norm of `g`.
    pub norm_g: f64,
    /// Fourier-bound `C^0` norm of `∂_ω g − f + f̂(0)`.
    pub residual: f64,
}

pub fn solve_small_divisor(f: &TrigPoly, omega: &FrequencyVector) -> Result<SmallDivisorSolution> {
    if omega.d() != f.d() {
        return Err(HarmonicsError::Dimension(format!("ω has {} entries, f.d = {}", omega.d(), f.d())));
    }
    let mut g = TrigPoly::zero(f.d(), f.n());
    let mut bound = 0.0;
    for (k, m) in f.modes() {
        let nk = l1(k);
        if nk == 0 {
            continue;
        }
        let w = omega.dot(k);
        let divisor = 2.0 * std::f64::consts::PI * w.abs();
        if divisor < DIVISOR_FLOOR {
            return Err(HarmonicsError::NearResonant { k: k.clone(), divisor });
        }
        if w.abs() * (nk as f64).powf(omega.tau) < omega.kappa {
            return Err(HarmonicsError::NotDiophantine { k: k.clone() });
        }
        g.set(k.clone(), m / c(0.0, 2.0 * std::f64::consts::PI * w));
        bound += (nk as f64).powf(omega.tau) * linalg::norm(m);
    }
    bound /= 2.0 * std::f64::consts::PI * omega.kappa;
    let mut centered = f.clone();
    centered.set(vec![0; f.d()], linalg::zeros(f.n()));
    let residual = cr_norm(&g.derivative(&omega.omega)?.sub(&centered)?, 0, NormMethod::FourierBound, None);
    let norm_g = cr_norm(&g, 0, NormMethod::FourierBound, None);
    Ok(SmallDivisorSolution { g, bound, norm_g, residual })
}

/// Solution of `∂_ω u − αu = f` with its certificate values.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedSolution {
    pub u: TrigPoly,
    /// `C ρ^{-1} max(N,1)^{(d+1)/2} ‖f‖_{C^0}` with the Fourier-bound norm of `f`.
    pub bound: f64,
    pub constant: f64,
    pub norm_u: f64,
    pub residual: f64,
}

pub fn solve_shifted(f: &TrigPoly, alpha: C64, omega: &FrequencyVector, n_max: usize, rho: f64) -> Result<ShiftedSolution> {
    if omega.d() != f.d() {
        return Err(HarmonicsError::Dimension(format!("ω has {} entries, f.d = {}", omega.d(), f.d())));
    }
    if f.degree() > n_max {
        return Err(HarmonicsError::Dimension(format!("f has degree {} > N = {}", f.degree(), n_max)));
    }
    for k in l1_ball(f.d(), n_max) {
        let div = c(0.0, 2.0 * std::f64::consts::PI * omega.dot(&k)) - alpha;
        if div.norm() < DIVISOR_FLOOR {
            return Err(HarmonicsError::NearResonant { k, divisor: div.norm() });
        }
        if div.norm() < rho {
            return Err(HarmonicsError::BelowRho { k, defect: div.norm(), rho });
        }
    }
    let mut u = TrigPoly::zero(f.d(), f.n());
    for (k, m) in f.modes() {
        let div = c(0.0, 2.0 * std::f64::consts::PI * omega.dot(k)) - alpha;
        u.set(k.clone(), m / div);
    }
    let constant = 1.0;
    let nf = cr_norm(f, 0, NormMethod::FourierBound, None);
    let bound = constant / rho * (n_max.max(1) as f64).powf((f.d() as f64 + 1.0) / 2.0) * nf;
    let resid = u.derivative(&omega.omega)?.sub(&u.scale(alpha))?.sub(f)?;
    Ok(ShiftedSolution {
        norm_u: cr_norm(&u, 0, NormMethod::FourierBound, None),
        residual: cr_norm(&resid, 0, NormMethod::FourierBound, None),
        u,
        bound,
        constant,
    })
}

/// JSON form: `{"d","n","omega","modes":[{"k","re","im"}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolyJson {
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub omega: Vec<f64>,
    pub modes: Vec<ModeJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeJson {
    pub k: Vec<i64>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl TrigPolyJson {
    pub fn from_poly(p: &TrigPoly, omega: &[f64]) -> Self {
        let modes = p
            .modes()
            .map(|(k, m)| {
                let mj = linalg::MatrixJson::from_mat(m);
                ModeJson { k: k.clone(), re: mj.re, im: mj.im }
            })
            .collect();
        TrigPolyJson { d: p.d(), n: p.n(), omega: omega.to_vec(), modes }
    }

    pub fn to_poly(&self) -> Result<TrigPoly> {
        if !self.omega.is_empty() && self.omega.len() != self.d {
            return Err(HarmonicsError::Dimension(format!("omega length {} != d {}", self.omega.len(), self.d)));
        }
        let mut p = TrigPoly::zero(self.d, self.n);
        for m in &self.modes {
            if m.k.len() != self.d {
                return Err(HarmonicsError::Dimension(format!("mode {:?} has wrong length", m.k)));
            }
            let mat = linalg::MatrixJson { re: m.re.clone(), im: m.im.clone() }
                .to_mat()
                .filter(|x| x.nrows() == self.n && x.ncols() == self.n)
                .ok_or_else(|| HarmonicsError::Dimension(format!("mode {:?} is not {}x{}", m.k, self.n, self.n)))?;
            p.add_to(m.k.clone(), &mat);
        }
        Ok(p)
    }
}
