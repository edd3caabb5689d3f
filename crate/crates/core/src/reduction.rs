//! Cocycle-level reduction: conjugation triples, trace and determinant
//! normalizations, realification of conjugations, the period-doubling
//! construction and the end-to-end real reduction pipeline.
//!
//! A triple `(Z, B, F)` for the cocycle `(ω, A)` satisfies
//! `∂_ωZ = AZ − Z(B+F)` up to its residual `∂_ωZ − AZ + Z(B+F)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{ln0, Inequality};
use crate::harmonics::{
    self, cr_norm, default_grid, grid_indices, interpolate, l1, l1_ball, FrequencyVector, HarmonicsError,
    InverseCertificate, Mode, NormMethod, TrigPoly, TrigPolyJson,
};
use crate::jordan::{self, JnfOptions, JordanError, Verdict};
use crate::linalg::{self, c, CMat, MatrixJson, C64};
use crate::resonance::{self, CaseTag, ClassReport, ResonanceError, ResonanceGraph};
use crate::spectral::{self, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Harmonics(#[from] HarmonicsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Jordan(#[from] JordanError),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error("normalization precondition: {0}")]
    Normalization(String),
    #[error("not real: {0}")]
    NotReal(String),
    #[error("det W dips to {min:e} below the floor {floor:e}")]
    DetDip { min: f64, floor: f64 },
    #[error("no witness for diagonal entry {0}")]
    MissingWitness(usize),
    #[error("structure mismatch: {0}")]
    Structure(String),
    #[error("policy violation: {0}")]
    Policy(String),
    #[error("step {step}: hypothesis failed: {name}")]
    Hypothesis { step: usize, name: String },
    #[error("step {step}: certificate failed: {name}")]
    Certificate { step: usize, name: String },
}

pub type Result<T> = std::result::Result<T, ReductionError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Strict,
    #[default]
    Diagnostic,
}

/// The cocycle `(ω, A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cocycle {
    pub omega: FrequencyVector,
    pub a: TrigPoly,
    pub real_flag: bool,
}

impl Cocycle {
    pub fn new(omega: FrequencyVector, a: TrigPoly) -> Result<Self> {
        if omega.d() != a.d() {
            return Err(ReductionError::Dimension(format!("ω has {} entries, A.d = {}", omega.d(), a.d())));
        }
        let real_flag = a.is_real();
        Ok(Cocycle { omega, a, real_flag })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn d(&self) -> usize {
        self.a.d()
    }

    /// `(ω/2, θ ↦ A(2θ))`.
    pub fn doubled(&self) -> Cocycle {
        let a = self.a.double_angle();
        Cocycle { omega: self.omega.half(), real_flag: a.is_real(), a }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleJson {
    pub omega: FrequencyVector,
    pub a: TrigPolyJson,
    pub real_flag: bool,
}

impl CocycleJson {
    pub fn from_cocycle(cy: &Cocycle) -> Self {
        CocycleJson { omega: cy.omega.clone(), a: TrigPolyJson::from_poly(&cy.a, &cy.omega.omega), real_flag: cy.real_flag }
    }

    pub fn to_cocycle(&self) -> Result<Cocycle> {
        let omega = FrequencyVector::new(self.omega.omega.clone(), self.omega.kappa, self.omega.tau)?;
        let cy = Cocycle::new(omega, self.a.to_poly()?)?;
        if cy.real_flag != self.real_flag {
            return Err(ReductionError::NotReal(format!("real_flag = {} but coefficients say {}", self.real_flag, cy.real_flag)));
        }
        Ok(cy)
    }
}

/// `(Z, Z⁻¹, B, F)` with the stored residual norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugationTriple {
    pub z: TrigPoly,
    pub z_inv: TrigPoly,
    pub b: CMat,
    pub f: TrigPoly,
    pub residual_norm: f64,
    pub inverse: InverseCertificate,
}

/// Target accuracy of grid-interpolated inverses.
pub const INVERSE_TOL: f64 = 1e-12;

fn max_ball_modes(d: usize) -> usize {
    match d {
        1 => 801,
        2 => 5000,
        _ => 8000,
    }
}

/// Largest radius `≤ want` whose `ℓ¹` ball fits the mode budget.
pub fn budget_radius(d: usize, want: usize) -> usize {
    let mut r = want;
    while r > 0 && l1_ball(d, r).len() > max_ball_modes(d) {
        r -= 1;
    }
    r
}

/// Inverse by grid interpolation, raising the output degree until the grid
/// error is below `tol` or the mode budget is spent.
pub fn certified_inverse(z: &TrigPoly, tol: f64) -> Result<(TrigPoly, InverseCertificate)> {
    let deg = z.degree();
    let mut out = budget_radius(z.d(), 2 * deg + 2);
    loop {
        let grid = 2 * (deg + out) + 1;
        let (inv, cert) = harmonics::invert_on_grid(z, grid, out, 1e-300)?;
        let next = budget_radius(z.d(), out + out / 2 + 2);
        if cert.max_grid_error <= tol || deg == 0 || next <= out {
            return Ok((inv, cert));
        }
        out = next;
    }
}

/// Drops modes whose coefficient, and that of the opposite mode, are below
/// `rel` times the Fourier norm; the decision is symmetric in `±k`.
pub fn prune(p: &TrigPoly, rel: f64) -> TrigPoly {
    let tol = rel * cr_norm(p, 0, NormMethod::FourierBound, None);
    let mut out = TrigPoly::zero(p.d(), p.n());
    for (k, m) in p.modes() {
        let neg: Mode = k.iter().map(|x| -x).collect();
        let other = p.coeff_ref(&neg).map_or(0.0, linalg::max_abs);
        if linalg::max_abs(m).max(other) > tol {
            out.set(k.clone(), m.clone());
        }
    }
    out
}

const PRUNE_REL: f64 = 1e-17;

/// `∂_ωZ − AZ + Z(B+F)`.
pub fn residual(cy: &Cocycle, z: &TrigPoly, b: &CMat, f: &TrigPoly) -> Result<TrigPoly> {
    let n = cy.n();
    if z.n() != n || f.n() != n || b.shape() != (n, n) || z.d() != cy.d() || f.d() != cy.d() {
        return Err(ReductionError::Dimension("triple and cocycle shapes differ".into()));
    }
    let bf = f.add(&TrigPoly::constant(cy.d(), b.clone()))?;
    Ok(z.derivative(&cy.omega.omega)?.sub(&cy.a.mul(z)?)?.add(&z.mul(&bf)?)?)
}

/// Grid sup of a polynomial on [`default_grid`] points per dimension.
pub fn sup_norm(p: &TrigPoly) -> f64 {
    cr_norm(p, 0, NormMethod::GridSup, None)
}

impl ConjugationTriple {
    /// Builds the triple, inverting `Z` on a grid and recording the residual.
    pub fn new(cy: &Cocycle, z: TrigPoly, b: CMat, f: TrigPoly) -> Result<Self> {
        let (z_inv, inverse) = certified_inverse(&z, INVERSE_TOL)?;
        Self::with_inverse(cy, z, z_inv, inverse, b, f)
    }

    pub fn with_inverse(cy: &Cocycle, z: TrigPoly, z_inv: TrigPoly, inverse: InverseCertificate, b: CMat, f: TrigPoly) -> Result<Self> {
        let residual_norm = sup_norm(&residual(cy, &z, &b, &f)?);
        Ok(ConjugationTriple { z, z_inv, b, f, residual_norm, inverse })
    }

    pub fn residual(&self, cy: &Cocycle) -> Result<TrigPoly> {
        residual(cy, &self.z, &self.b, &self.f)
    }

    /// Grid sup of `Z·Z⁻¹ − I`.
    pub fn inverse_defect(&self) -> f64 {
        let prod = self.z.mul(&self.z_inv).expect("same shape");
        sup_norm(&prod.sub(&TrigPoly::identity(self.z.d(), self.z.n())).expect("same shape"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleJson {
    pub z: TrigPolyJson,
    pub z_inv: TrigPolyJson,
    pub b: MatrixJson,
    pub f: TrigPolyJson,
    pub residual_norm: f64,
    pub inverse: InverseCertificate,
}

impl TripleJson {
    pub fn from_triple(t: &ConjugationTriple) -> Self {
        TripleJson {
            z: TrigPolyJson::from_poly(&t.z, &[]),
            z_inv: TrigPolyJson::from_poly(&t.z_inv, &[]),
            b: MatrixJson::from_mat(&t.b),
            f: TrigPolyJson::from_poly(&t.f, &[]),
            residual_norm: t.residual_norm,
            inverse: t.inverse.clone(),
        }
    }

    pub fn to_triple(&self) -> Result<ConjugationTriple> {
        let b = self.b.to_mat().ok_or_else(|| ReductionError::Dimension("B is not a rectangular matrix".into()))?;
        Ok(ConjugationTriple {
            z: self.z.to_poly()?,
            z_inv: self.z_inv.to_poly()?,
            b,
            f: self.f.to_poly()?,
            residual_norm: self.residual_norm,
            inverse: self.inverse.clone(),
        })
    }
}

/// Entry `(i, j)` as a scalar polynomial.
pub fn entry(p: &TrigPoly, i: usize, j: usize) -> TrigPoly {
    let mut out = TrigPoly::zero(p.d(), 1);
    for (k, m) in p.modes() {
        out.set(k.clone(), CMat::from_element(1, 1, m[(i, j)]));
    }
    out
}

fn scalar_const(d: usize, z: C64) -> TrigPoly {
    TrigPoly::constant(d, CMat::from_element(1, 1, z))
}

fn cofactor_det(rows: &[Vec<TrigPoly>], cols: &[usize], d: usize) -> TrigPoly {
    let r = rows.len() - cols.len();
    if cols.len() == 1 {
        return rows[r][cols[0]].clone();
    }
    let mut acc = TrigPoly::zero(d, 1);
    for (pos, &col) in cols.iter().enumerate() {
        let rest: Vec<usize> = cols.iter().copied().filter(|&x| x != col).collect();
        let term = rows[r][col].mul(&cofactor_det(rows, &rest, d)).expect("scalar");
        acc = if pos % 2 == 0 { acc.add(&term) } else { acc.sub(&term) }.expect("scalar");
    }
    acc
}

/// `θ ↦ det P(θ)` as a scalar polynomial: cofactor expansion for `n ≤ 4`,
/// alias-free grid interpolation otherwise.
pub fn det_poly(p: &TrigPoly) -> TrigPoly {
    let (n, d) = (p.n(), p.d());
    if n <= 4 {
        let rows: Vec<Vec<TrigPoly>> = (0..n).map(|i| (0..n).map(|j| entry(p, i, j)).collect()).collect();
        let cols: Vec<usize> = (0..n).collect();
        return cofactor_det(&rows, &cols, d);
    }
    let deg = n * p.degree();
    let g = 2 * deg + 1;
    let vals: Vec<CMat> = p.eval_grid(g).iter().map(|v| CMat::from_element(1, 1, v.determinant())).collect();
    interpolate(d, 1, g, deg, &vals)
}

/// Transpose of the cofactor matrix.
pub fn adjugate(m: &CMat) -> CMat {
    let n = m.nrows();
    if n == 1 {
        return linalg::eye(1);
    }
    CMat::from_fn(n, n, |i, j| {
        let minor = m.clone().remove_row(j).remove_column(i);
        let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        minor.determinant() * s
    })
}

/// `e^{s·g}` re-expanded as a truncated scalar polynomial; returns the
/// polynomial and the largest error observed on an offset check grid.
pub fn exp_scalar(g: &TrigPoly, s: f64) -> (TrigPoly, f64) {
    let d = g.d();
    if g.is_zero() {
        return (scalar_const(d, c(1.0, 0.0)), 0.0);
    }
    let deg = g.degree();
    let mut out = budget_radius(d, 2 * deg + 2);
    loop {
        let grid = 2 * out + 2;
        let vals: Vec<CMat> = g.eval_grid(grid).iter().map(|v| v.map(|z| (z * s).exp())).collect();
        let e = interpolate(d, 1, grid, out, &vals);
        let check = grid + 1;
        let err = g
            .eval_grid(check)
            .iter()
            .zip(e.eval_grid(check))
            .map(|(v, w)| ((v[(0, 0)] * s).exp() - w[(0, 0)]).norm())
            .fold(0.0, f64::max);
        let next = budget_radius(d, out + out / 2 + 2);
        if err <= 1e-15 || next <= out {
            return (e, err);
        }
        out = next;
    }
}

fn lift_scalar(p: &TrigPoly, n: usize) -> TrigPoly {
    TrigPoly::identity(p.d(), n).scalar_mul(p).expect("scalar on the same torus")
}

/// `Z = e^g·I` and `B = A − fI` with `f = (Tr A − ∫Tr A)/n` and `∂_ω g = f`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceNormalization {
    pub z: TrigPoly,
    pub z_inv: TrigPoly,
    pub b: TrigPoly,
    pub g: TrigPoly,
    pub mean_trace: C64,
    /// Largest re-expansion error of `e^{±g}`.
    pub truncation_error: f64,
    /// Grid sup of `∂_ωZ − AZ + ZB`.
    pub residual: f64,
    /// Small-divisor bound on `‖g‖_{C^0}`.
    pub g_bound: f64,
}

pub fn normalize_trace(cy: &Cocycle) -> Result<TraceNormalization> {
    let (d, n) = (cy.d(), cy.n());
    let tr = cy.a.trace();
    let mean_trace = tr.mean()[(0, 0)];
    let mut f = tr.scale(c(1.0 / n as f64, 0.0));
    f.set(vec![0; d], CMat::zeros(1, 1));
    let sol = harmonics::solve_small_divisor(&f, &cy.omega)?;
    let g = if cy.real_flag { sol.g.symmetrize_real() } else { sol.g.clone() };
    let (ep, e1) = exp_scalar(&g, 1.0);
    let (em, e2) = exp_scalar(&g, -1.0);
    let (ep, em) = if cy.real_flag { (ep.symmetrize_real(), em.symmetrize_real()) } else { (ep, em) };
    let z = lift_scalar(&ep, n);
    let z_inv = lift_scalar(&em, n);
    let b = cy.a.sub(&lift_scalar(&f, n))?;
    let res = z.derivative(&cy.omega.omega)?.sub(&cy.a.mul(&z)?)?.add(&z.mul(&b)?)?;
    Ok(TraceNormalization { residual: sup_norm(&res), z, z_inv, b, g, mean_trace, truncation_error: e1.max(e2), g_bound: sol.bound })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetTransportReport {
    /// Grid max of `|∂_ω det Z − Tr(A−B−F)det Z − Tr(R·Z^adj)|`, `R` the residual.
    pub identity_defect: f64,
    /// Grid max of `|∂_ω det Z − Tr(A−B−F)det Z|`, which equals `|Tr(R·Z^adj)|`.
    pub transport_defect: f64,
    pub grid: usize,
}

/// Determinant transport: with `∂_ωZ = AZ − ZB + F₁`, `F₁ = −ZF + R`,
/// `∂_ω det Z = Tr(A−B) det Z + Tr(F₁ Z^adj)`.
pub fn det_transport_check(cy: &Cocycle, t: &ConjugationTriple) -> Result<DetTransportReport> {
    let r = t.residual(cy)?;
    let det = det_poly(&t.z);
    let ddet = det.derivative(&cy.omega.omega)?;
    let b = TrigPoly::constant(cy.d(), t.b.clone());
    let tr = cy.a.sub(&b)?.sub(&t.f)?.trace();
    let deg = [t.z.degree(), cy.a.degree(), t.f.degree(), r.degree()].into_iter().max().unwrap_or(0);
    let grid = default_grid(deg);
    let (zv, rv, dv, ddv, trv) = (t.z.eval_grid(grid), r.eval_grid(grid), det.eval_grid(grid), ddet.eval_grid(grid), tr.eval_grid(grid));
    let mut identity_defect: f64 = 0.0;
    let mut transport_defect: f64 = 0.0;
    for i in 0..zv.len() {
        let base = ddv[i][(0, 0)] - trv[i][(0, 0)] * dv[i][(0, 0)];
        let extra = (&rv[i] * adjugate(&zv[i])).trace();
        identity_defect = identity_defect.max((base - extra).norm());
        transport_defect = transport_defect.max(base.norm());
    }
    Ok(DetTransportReport { identity_defect, transport_defect, grid })
}

/// Grid quadrature of `∫ w·det(Re Z + λ Im Z)`; `weights` are samples of a
/// real weight on the same `grid^d` points, `None` for `w = 1`.
fn det_mean(re: &TrigPoly, im: &TrigPoly, lambda: f64, grid: usize, weights: Option<&[f64]>) -> C64 {
    let w = re.add(&im.scale(c(lambda, 0.0))).expect("same shape");
    let vals = w.eval_grid(grid);
    let sum: C64 = match weights {
        Some(ws) => vals.iter().zip(ws).map(|(v, x)| v.determinant() * *x).sum(),
        None => vals.iter().map(|v| v.determinant()).sum(),
    };
    sum / vals.len() as f64
}

/// Outcome of the λ pigeonhole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda0: f64,
    /// `P(λ₀)` by direct quadrature.
    pub value: C64,
    /// `1/(4(n+1))^n`.
    pub bound: f64,
    pub slot: usize,
    /// Monomial coefficients of `P`, constant term first.
    pub coefficients: Vec<C64>,
    pub roots: Vec<C64>,
    /// `|P(λ₀) − interpolant(λ₀)|`.
    pub interpolant_gap: f64,
    pub inequality: Inequality,
}

fn poly_roots(coef: &[C64]) -> Vec<C64> {
    let scale = coef.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut deg = coef.len() - 1;
    while deg > 0 && coef[deg].norm() <= 1e-12 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let mut comp = linalg::zeros(deg);
    for i in 1..deg {
        comp[(i, i - 1)] = c(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coef[i] / coef[deg];
    }
    let (_, t) = linalg::schur(&comp);
    (0..deg).map(|i| t[(i, i)]).collect()
}

/// λ-pigeonhole: `P(λ) = ∫det(Re Z + λ Im Z)` has degree `≤ n`, so one of the
/// `n+1` slots of `[−1, 1]` holds no real part of a root; its midpoint has
/// `|P(λ₀)| ≥ 1/(4(n+1))^n` when `|P(i)| = |∫det Z| = 1`.
pub fn choose_lambda(z: &TrigPoly) -> Result<LambdaChoice> {
    let grid = z.n() * z.degree() + 1;
    choose_lambda_weighted(z, grid, None)
}

/// [`choose_lambda`] for `w·Z` with a real scalar weight sampled on the grid.
fn choose_lambda_weighted(z: &TrigPoly, grid: usize, weights: Option<&[f64]>) -> Result<LambdaChoice> {
    let n = z.n();
    let (re, im) = (z.re_part(), z.im_part());
    let vals = z.eval_grid(grid);
    let dz: C64 = match weights {
        Some(ws) => vals.iter().zip(ws).map(|(v, x)| v.determinant() * *x).sum(),
        None => vals.iter().map(|v| v.determinant()).sum(),
    };
    let dz = dz / vals.len() as f64;
    if (dz.norm() - 1.0).abs() > 1e-8 {
        return Err(ReductionError::Normalization(format!("|∫det Z| = {} is not 1", dz.norm())));
    }
    let nodes: Vec<f64> = (0..=n).map(|j| ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * (n + 1)) as f64).cos()).collect();
    let samples: Vec<C64> = nodes.iter().map(|&l| det_mean(&re, &im, l, grid, weights)).collect();
    let vander = CMat::from_fn(n + 1, n + 1, |i, j| c(nodes[i].powi(j as i32), 0.0));
    let rhs = nalgebra::DVector::from_vec(samples);
    let coef = vander.lu().solve(&rhs).ok_or_else(|| ReductionError::Normalization("singular Chebyshev system".into()))?;
    let coefficients: Vec<C64> = coef.iter().copied().collect();
    let roots = poly_roots(&coefficients);
    let width = 2.0 / (n + 1) as f64;
    let slot = (0..=n)
        .find(|&k| {
            let (lo, hi) = (-1.0 + k as f64 * width, -1.0 + (k + 1) as f64 * width);
            roots.iter().all(|r| !(r.re > lo && r.re < hi))
        })
        .expect("n+1 slots, at most n roots");
    let lambda0 = -1.0 + (2 * slot + 1) as f64 / (n + 1) as f64;
    let value = det_mean(&re, &im, lambda0, grid, weights);
    let interp = coefficients.iter().rev().fold(c(0.0, 0.0), |acc, a| acc * lambda0 + a);
    let bound = (-(n as f64) * (4.0 * (n + 1) as f64).ln()).exp();
    let inequality = Inequality::le("|P(λ₀)| >= 1/(4(n+1))^n", bound, value.norm());
    Ok(LambdaChoice { lambda0, value, bound, slot, coefficients, roots, interpolant_gap: (value - interp).norm(), inequality })
}

/// `W⁻¹K` sampled on a grid and interpolated within the mode budget.
pub fn left_divide(w: &TrigPoly, k: &TrigPoly) -> Result<TrigPoly> {
    if k.is_zero() {
        return Ok(TrigPoly::zero(k.d(), k.n()));
    }
    let (dw, dk) = (w.degree(), k.degree());
    let out = budget_radius(w.d(), dk + 2 * dw + 2);
    let grid = 2 * (out + dw.max(dk)) + 1;
    let (wv, kv) = (w.eval_grid(grid), k.eval_grid(grid));
    let mut vals = Vec::with_capacity(wv.len());
    for (i, (a, b)) in wv.iter().zip(&kv).enumerate() {
        let inv = linalg::inverse(a).ok_or_else(|| HarmonicsError::SingularAtGridPoint {
            theta: harmonics::grid_theta(&grid_indices(w.d(), grid)[i], grid),
            det: a.determinant().norm(),
        })?;
        vals.push(inv * b);
    }
    Ok(interpolate(w.d(), w.n(), grid, out, &vals))
}

/// Real triple from [`realify_step`] with the quantities of each sub-step.
#[derive(Clone, Debug, PartialEq)]
pub struct RealifyReport {
    pub triple: ConjugationTriple,
    pub lambda: LambdaChoice,
    /// `(∫ e^{−ng} det Z)^{1/n}`, principal branch.
    pub a: C64,
    /// `∫Tr A / n`.
    pub trace_shift: f64,
    /// `(1/n)∫Tr(F) det Z` in the normalized frame; its real part moves into `B`.
    pub det_shift: C64,
    /// `|Tr B + n·det_shift|` after trace removal; zero up to the residual.
    pub trace_identity_gap: f64,
    /// `∫ det W` in the normalized frame.
    pub det_mean: C64,
    pub det_min_grid: f64,
    /// `Σ_{k≠0}|det Ŵ(k)|` plus the interpolation error of the samples.
    pub det_tail: f64,
    /// Small-divisor bound on `‖det W − ∫det W‖_{C^0}` from `∂_ω det W`.
    pub small_divisor_bound: Option<f64>,
    pub trace_truncation: f64,
    pub inequalities: Vec<Inequality>,
    pub warnings: Vec<String>,
}

/// Real triple `(W, B̃, G)` for a real cocycle from a triple with real `B`.
///
/// The certification runs in the trace-normalized frame `e^{−g}Z/a`. Since
/// `e^{−g}` is a real scalar it cancels in `W = Re Z̃ + λ Im Z̃`, so the
/// returned `W` is built from `Z/a` directly and keeps the degree of `Z`.
pub fn realify_step(cy: &Cocycle, t: &ConjugationTriple) -> Result<RealifyReport> {
    if !cy.real_flag {
        return Err(ReductionError::NotReal("cocycle coefficients are not conjugation-symmetric".into()));
    }
    let (n, d) = (cy.n(), cy.d());
    let nf = n as f64;
    let im_b = t.b.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if im_b > 1e-12 * (1.0 + linalg::norm(&t.b)) {
        return Err(ReductionError::NotReal(format!("B has imaginary part {im_b:e}")));
    }
    let mut warnings = Vec::new();
    if im_b > 0.0 {
        warnings.push(format!("dropped imaginary part {im_b:e} of B"));
    }
    let b_real = t.b.map(|z| c(z.re, 0.0));

    // (a) trace normalization: weights e^{−n g} on the quadrature grid.
    let tn = normalize_trace(cy)?;
    let trace_shift = tn.mean_trace.re / nf;
    let e_deg = tn.z.degree();
    let grid = n * (t.z.degree() + e_deg) + 1;
    let weights = |gsize: usize| -> Vec<f64> { tn.g.eval_grid(gsize).iter().map(|v| (-nf * v[(0, 0)].re).exp()).collect() };
    let wq = weights(grid);

    // (b) scalar rescale.
    let zv = t.z.eval_grid(grid);
    let dm: C64 = zv.iter().zip(&wq).map(|(v, x)| v.determinant() * *x).sum::<C64>() / zv.len() as f64;
    if dm.norm() == 0.0 {
        return Err(ReductionError::Normalization("∫det Z vanishes".into()));
    }
    let a = C64::from_polar(dm.norm().powf(1.0 / nf), dm.arg() / nf);
    let z_tilde = t.z.scale(a.inv());

    // (c) recentre the trace of F into B.
    let zt_vals = z_tilde.eval_grid(grid);
    let fv = t.f.eval_grid(grid);
    let det_shift = zt_vals.iter().zip(&fv).zip(&wq).map(|((z, f), x)| f.trace() * z.determinant() * *x).sum::<C64>()
        / (zt_vals.len() as f64 * nf);
    let trace_identity_gap = (b_real.trace() - c(nf * trace_shift, 0.0) + det_shift * nf).norm();
    let shift = det_shift.re;
    let b_out = &b_real + linalg::eye(n) * c(shift, 0.0);
    let f_s = t.f.sub(&TrigPoly::constant(d, linalg::eye(n) * c(shift, 0.0)))?;

    // (d) λ and W.
    let lambda = choose_lambda_weighted(&z_tilde, grid, Some(&wq))?;
    let l0 = lambda.lambda0;
    let w = z_tilde.re_part().add(&z_tilde.im_part().scale(c(l0, 0.0)))?;

    // (e) invertibility of W in the normalized frame.
    let det_w = det_poly(&w);
    let cgrid = 2 * n * (w.degree() + e_deg) + 1;
    let wc = weights(cgrid);
    let samples: Vec<CMat> = det_w.eval_grid(cgrid).iter().zip(&wc).map(|(v, x)| v * c(*x, 0.0)).collect();
    let out = budget_radius(d, n * (w.degree() + e_deg));
    let det_norm = interpolate(d, 1, cgrid, out, &samples);
    let interp_err = det_norm.eval_grid(cgrid).iter().zip(&samples).map(|(p, q)| (p[(0, 0)] - q[(0, 0)]).norm()).fold(0.0, f64::max);
    let det_mean = det_norm.mean()[(0, 0)];
    let det_tail = det_norm.modes().filter(|(k, _)| l1(k) != 0).map(|(_, m)| m[(0, 0)].norm()).sum::<f64>() + interp_err;
    let det_min_grid = samples.iter().map(|v| v[(0, 0)].norm()).fold(f64::INFINITY, f64::min);
    let h = det_norm.derivative(&cy.omega.omega)?;
    let small_divisor_bound = harmonics::solve_small_divisor(&h, &cy.omega).ok().map(|s| s.bound);
    let floor = 0.5 * lambda.bound;
    if det_min_grid < floor {
        return Err(ReductionError::DetDip { min: det_min_grid, floor });
    }
    let half = 0.5 * det_mean.norm();
    let mut inequalities = vec![
        lambda.inequality.clone(),
        Inequality::le("grid min |det W| >= |∫det W|/2", half, det_min_grid),
        Inequality::le("Fourier tail of det W <= |∫det W|/2", det_tail, half),
        Inequality::le("small-divisor bound on det W - ∫det W <= |∫det W|/2", small_divisor_bound.unwrap_or(f64::INFINITY), half),
    ];
    if tn.truncation_error > 1e-10 {
        warnings.push(format!("e^g re-expansion error {:e}", tn.truncation_error));
    }

    let zf = z_tilde.mul(&f_s)?;
    let k = zf.re_part().add(&zf.im_part().scale(c(l0, 0.0)))?;
    let g = prune(&left_divide(&w, &k)?, PRUNE_REL);
    let triple = ConjugationTriple::new(cy, w, b_out, g)?;
    inequalities.push(Inequality::le("W W⁻¹ grid error", triple.inverse.max_grid_error, 1e-8));
    Ok(RealifyReport {
        triple,
        lambda,
        a,
        trace_shift,
        det_shift,
        trace_identity_gap,
        det_mean,
        det_min_grid,
        det_tail,
        small_divisor_bound,
        trace_truncation: tn.truncation_error,
        inequalities,
        warnings,
    })
}

/// `(P·W)` for `W = diag(e^{2iπ⟨m_j,θ⟩})`: column `l` moves by `m_l`.
pub fn phase_right(p: &TrigPoly, modes: &[Mode]) -> TrigPoly {
    shift_entries(p, |_, l| modes[l].clone())
}

/// `W⁻¹P` for the same `W`: row `j` moves by `−m_j`.
pub fn phase_left_inv(p: &TrigPoly, modes: &[Mode]) -> TrigPoly {
    shift_entries(p, |j, _| modes[j].iter().map(|x| -x).collect())
}

fn shift_entries(p: &TrigPoly, offset: impl Fn(usize, usize) -> Mode) -> TrigPoly {
    let n = p.n();
    let mut acc: std::collections::BTreeMap<Mode, CMat> = Default::default();
    for (k, m) in p.modes() {
        for j in 0..n {
            for l in 0..n {
                if m[(j, l)] == c(0.0, 0.0) {
                    continue;
                }
                let key: Mode = k.iter().zip(offset(j, l)).map(|(a, b)| a + b).collect();
                acc.entry(key).or_insert_with(|| linalg::zeros(n))[(j, l)] += m[(j, l)];
            }
        }
    }
    let mut out = TrigPoly::zero(p.d(), n);
    for (k, m) in acc {
        out.set(k, m);
    }
    out
}

/// Diagonal phase matrix `diag(e^{2iπ⟨m_j,θ⟩})`.
pub fn phase_matrix(d: usize, modes: &[Mode]) -> TrigPoly {
    let n = modes.len();
    let mut out = TrigPoly::zero(d, n);
    for (j, m) in modes.iter().enumerate() {
        let mut coef = out.coeff(m);
        coef[(j, j)] = c(1.0, 0.0);
        out.set(m.clone(), coef);
    }
    out
}

/// `‖W^{±1}‖_{C^r}` for a diagonal phase matrix: `max_j max(1, 2π‖m_j‖_∞)^r`.
pub fn phase_cr_norm(modes: &[Mode], r: usize) -> f64 {
    modes
        .iter()
        .map(|m| (2.0 * std::f64::consts::PI * m.iter().map(|x| x.abs()).max().unwrap_or(0) as f64).max(1.0).powi(r as i32))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingBounds {
    /// `4nπN`.
    pub w_norm_base: f64,
    pub b_dprime_norm: f64,
    /// `‖W^{±1}‖_{C^r}` for `r = 0..=r_max`.
    pub w_cr: Vec<f64>,
}

/// `∂_{ω/2}W = BW − W(B′+B″)` with `W` diagonal, `B′` conjugation-stable.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublingResult {
    pub w: TrigPoly,
    /// Mode of each diagonal entry of `W` on the `ω/2` torus.
    pub modes: Vec<Mode>,
    pub cases: Vec<CaseTag>,
    /// `B′` before realification; off-diagonal entries are those of `B`.
    pub b_prime_jordan: CMat,
    /// Unitary `P` with `P*B′P` real.
    pub p: CMat,
    /// `P*B′P`, entrywise real.
    pub b_prime: CMat,
    pub b_dprime: CMat,
    pub bounds: DoublingBounds,
    /// Largest coefficient of `∂_{ω/2}W − BW + W(B′+B″)`.
    pub identity_defect: f64,
    pub structure: Vec<jordan::StructureComparison>,
    pub inequalities: Vec<Inequality>,
}

impl DoublingResult {
    /// `(WP, P*B′P, P*B″P)`, which satisfies the same identity with real `B′`.
    pub fn realified(&self) -> (TrigPoly, CMat, CMat) {
        let pa = self.p.adjoint();
        (self.w.right_mul(&self.p), self.b_prime.clone(), &pa * &self.b_dprime * &self.p)
    }
}

/// Sizes of the Jordan blocks of `j` that start at one of `positions`.
fn block_sizes_at(blocks: &[jordan::JordanBlock], positions: &[usize]) -> Vec<usize> {
    blocks.iter().filter(|b| positions.contains(&b.start)).map(|b| b.size).collect()
}

/// Nilpotent Jordan matrix with the given block sizes.
fn nilpotent(sizes: &[usize]) -> CMat {
    linalg::block_diag(&sizes.iter().map(|&s| linalg::jordan_block(s, c(0.0, 0.0))).collect::<Vec<_>>())
}

/// Permutation `C` with `N₁C = CN₂` matching blocks of equal size, if any.
fn block_matching(s1: &[usize], s2: &[usize]) -> Option<CMat> {
    let n: usize = s1.iter().sum();
    if n != s2.iter().sum::<usize>() || s1.len() != s2.len() {
        return None;
    }
    let start = |s: &[usize], i: usize| s[..i].iter().sum::<usize>();
    let mut used = vec![false; s1.len()];
    let mut cm = linalg::zeros(n);
    for (j, &size) in s2.iter().enumerate() {
        let i = (0..s1.len()).find(|&i| !used[i] && s1[i] == size)?;
        used[i] = true;
        for t in 0..size {
            cm[(start(s1, i) + t, start(s2, j) + t)] = c(1.0, 0.0);
        }
    }
    Some(cm)
}

/// Construction of `W`, `B′`, `B″` from a class report of `σ(B)`.
///
/// Odd-loop nodes get `e^{2iπ⟨k,θ⟩}` and `B′ = Re α`; bipartite nodes get
/// `e^{4iπ⟨k,θ⟩}` and `B′ = α₀` on `Σ1`, `ᾱ₀` on `Σ2`.
pub fn doubling_conjugation(
    b: &CMat,
    graph: &ResonanceGraph,
    report: &ClassReport,
    omega: &FrequencyVector,
    n_lat: usize,
    rho: f64,
    r_max: usize,
) -> Result<DoublingResult> {
    let n = b.nrows();
    let blocks = jordan::jordan_blocks(b, jordan::PATTERN_TOL)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut modes = Vec::with_capacity(n);
    let mut cases = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    let mut b_prime = b.clone();
    let mut b_dprime = linalg::zeros(n);
    for j in 0..n {
        let alpha = b[(j, j)];
        let node = graph.nodes.iter().position(|x| x.value == alpha).ok_or(ReductionError::MissingWitness(j))?;
        let w = report.witness(node).ok_or(ReductionError::MissingWitness(j))?;
        let class = report.classes.iter().find(|cl| cl.nodes.contains(&node)).ok_or(ReductionError::MissingWitness(j))?;
        let phase = c(0.0, two_pi * omega.dot(&w.k));
        let (mode, bp, bpp) = match w.case {
            CaseTag::OddLoop => (w.k.clone(), c(alpha.re, 0.0), (alpha - alpha.conj() - phase) * 0.5),
            CaseTag::BipartiteS1 | CaseTag::BipartiteS2 => {
                let a0 = graph.nodes[class.anchor.ok_or(ReductionError::MissingWitness(j))?].value;
                let base = if w.case == CaseTag::BipartiteS1 { a0 } else { a0.conj() };
                (w.k.iter().map(|x| 2 * x).collect(), base, alpha - base - phase)
            }
        };
        b_prime[(j, j)] = bp;
        b_dprime[(j, j)] = bpp;
        modes.push(mode);
        cases.push(w.case);
        nodes.push(node);
    }

    let mut structure = Vec::new();
    for class in report.classes.iter().filter(|cl| !cl.odd_loop) {
        let pos = |part: &[usize]| -> Vec<usize> { (0..n).filter(|&j| part.contains(&nodes[j])).collect() };
        let (p1, p2) = (pos(&class.sigma1), pos(&class.sigma2));
        let (s1, s2) = (block_sizes_at(&blocks, &p1), block_sizes_at(&blocks, &p2));
        let cm = block_matching(&s1, &s2)
            .ok_or_else(|| ReductionError::Structure(format!("Σ1 blocks {s1:?} vs Σ2 blocks {s2:?}")))?;
        let cmp = jordan::same_structure(&nilpotent(&s1), &nilpotent(&s2), &cm, 1.0)?;
        if cmp.verdict != Verdict::GuaranteedEqual || !cmp.ranks_equal {
            return Err(ReductionError::Structure(format!("Σ1 blocks {s1:?} vs Σ2 blocks {s2:?}")));
        }
        structure.push(cmp);
    }

    let (p, r) = jordan::realify_jordan(&b_prime, 1e-12)?;
    let w = phase_matrix(omega.d(), &modes);
    let lhs = w.derivative(&omega.half().omega)?.sub(&w.left_mul(b))?.add(&w.right_mul(&(&b_prime + &b_dprime)))?;
    let identity_defect = lhs.modes().map(|(_, m)| linalg::max_abs(m)).fold(0.0, f64::max);

    let nf = n as f64;
    let w_norm_base = 4.0 * nf * std::f64::consts::PI * n_lat as f64;
    let b_dprime_norm = linalg::norm(&b_dprime);
    let w_cr: Vec<f64> = (0..=r_max).map(|r| phase_cr_norm(&modes, r)).collect();
    let mut inequalities = vec![Inequality::le("doubling identity coefficients", identity_defect, 1e-11 * (1.0 + linalg::norm(b)))];
    if rho == 0.0 {
        inequalities.push(Inequality::le("exact mode ‖B″‖ = 0 to rounding", b_dprime_norm, 1e-12 * (1.0 + linalg::norm(b))));
    } else {
        inequalities.push(Inequality::le("‖B″‖ <= 2nρ", b_dprime_norm, 2.0 * nf * rho));
    }
    for (r, &v) in w_cr.iter().enumerate() {
        inequalities.push(Inequality::le(format!("‖W^±1‖_C^{r} <= (4nπN)^{r}"), v, w_norm_base.max(1.0).powi(r as i32)));
    }
    let im_r = r.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    inequalities.push(Inequality::le("B′ entrywise real after realification", im_r, 0.0));
    Ok(DoublingResult {
        w,
        modes,
        cases,
        b_prime_jordan: b_prime,
        p,
        b_prime: r,
        b_dprime,
        bounds: DoublingBounds { w_norm_base, b_dprime_norm, w_cr },
        identity_defect,
        structure,
        inequalities,
    })
}

/// Truncation lemma check: `V = T_N U`, hypothesis `N ≥ C_d‖U‖_{C^{d+1}}‖U‖_{C^0}`,
/// conclusion `‖V⁻¹ − V̄‖_{C^0} ≤ ¼‖V‖_{C^0}` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub hypothesis: Inequality,
    pub conclusion: Inequality,
    /// The conclusion is a certificate only when the hypothesis holds.
    pub certified: bool,
    pub c_d: f64,
}

pub fn truncation_check(u: &TrigPoly, n_lat: usize, c_d: f64) -> TruncationReport {
    let d = u.d();
    let u0 = cr_norm(u, 0, NormMethod::FourierBound, None);
    let ud = cr_norm(u, d + 1, NormMethod::FourierBound, None);
    let hypothesis = Inequality::le("N >= C_d ‖U‖_{C^{d+1}} ‖U‖_{C^0} (ln)", c_d.ln() + ln0(ud) + ln0(u0), ln0(n_lat as f64));
    let v = u.truncate(n_lat);
    let grid = default_grid(v.degree().max(u.degree()));
    let vals = v.eval_grid(grid);
    let bar = v.conj().eval_grid(grid);
    let mut lhs: f64 = 0.0;
    let mut sup_v: f64 = 0.0;
    for (x, y) in vals.iter().zip(&bar) {
        sup_v = sup_v.max(linalg::norm(x));
        lhs = lhs.max(linalg::inverse(x).map_or(f64::INFINITY, |xi| linalg::norm(&(xi - y))));
    }
    let conclusion = Inequality::le("‖V⁻¹ − V̄‖_C0 <= ‖V‖_C0 / 4", lhs, 0.25 * sup_v);
    TruncationReport { certified: hypothesis.pass, hypothesis, conclusion, c_d }
}

/// Default for the unspecified constants `C₁`, `C_d`: `16 n² 3^d`.
pub fn default_constant(n: usize, d: usize) -> f64 {
    16.0 * (n * n) as f64 * 3f64.powi(d as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmostRealParams {
    pub n_lat: usize,
    pub rho: f64,
    pub c1: f64,
    pub c_d: f64,
    pub r_max: usize,
    pub mode: RunMode,
}

impl AlmostRealParams {
    pub fn new(n: usize, d: usize, n_lat: usize, rho: f64) -> Self {
        let k = default_constant(n, d);
        AlmostRealParams { n_lat, rho, c1: k, c_d: k, r_max: 3, mode: RunMode::Diagnostic }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlmostRealReport {
    pub doubling: DoublingResult,
    pub graph: ResonanceGraph,
    pub classes: ClassReport,
    /// `V = T_N U` and `F = T_N G` with `G = ∂_ωU − BU + UB̄`.
    pub v: TrigPoly,
    pub f: TrigPoly,
    /// Supremum of `‖UŪ − I‖` on the grid.
    pub conj_inverse_defect: f64,
    pub hypotheses: Vec<Inequality>,
    /// Checked but not enforced: block bounds, norm bounds, the proof-form smallness.
    pub diagnostics: Vec<Inequality>,
    /// Same-structure comparisons on the `(Σ1, Σ2)` blocks of `V̂(0)`.
    pub sigma_blocks: Vec<Option<jordan::StructureComparison>>,
    pub truncation: TruncationReport,
    pub inequalities: Vec<Inequality>,
    pub warnings: Vec<String>,
}

fn grid_sup_defect(p: &TrigPoly, q: &TrigPoly, target: &CMat) -> f64 {
    let grid = default_grid(p.degree() + q.degree());
    p.eval_grid(grid).iter().zip(q.eval_grid(grid)).map(|(a, b)| linalg::norm(&(a * b - target))).fold(0.0, f64::max)
}

fn submatrix(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Turns an almost-real conjugation `U` (`U⁻¹ ≈ Ū`, `∂_ωU ≈ BU − UB̄`) into
/// the doubling data `(W, B′, B″)`.
pub fn almost_real_step(
    u: &TrigPoly,
    b: &CMat,
    omega: &FrequencyVector,
    params: &AlmostRealParams,
    step: usize,
) -> Result<AlmostRealReport> {
    let n = b.nrows();
    let d = omega.d();
    if u.n() != n || u.d() != d {
        return Err(ReductionError::Dimension(format!("U is {}x{} on T^{}, B is {n}x{n}, ω has d = {d}", u.n(), u.n(), u.d())));
    }
    let (nf, df) = (n as f64, d as f64);
    let mut warnings = Vec::new();
    let ubar = u.conj();
    let conj_inverse_defect = grid_sup_defect(u, &ubar, &linalg::eye(n));
    let g = u.derivative(&omega.omega)?.sub(&u.left_mul(b))?.add(&u.right_mul(&linalg::conj(b)))?;

    let ln_c1 = params.c1.ln();
    let ln_n = ln0(params.n_lat as f64);
    let ln_rho = ln0(params.rho);
    let u0 = cr_norm(u, 0, NormMethod::FourierBound, None);
    let ud1 = cr_norm(u, d + 1, NormMethod::FourierBound, None);
    let gd1 = cr_norm(&g, d + 1, NormMethod::FourierBound, None);
    let ln_u0 = ln0(u0);
    let hypotheses = vec![
        Inequality::le("UŪ = I on the grid", conj_inverse_defect, 1e-8),
        Inequality::le("lattice size: C₁‖U‖_{C^{d+1}}‖U‖_{C^0} <= N (ln)", ln_c1 + ln0(ud1) + ln_u0, ln_n),
        Inequality::le(
            "smallness: ‖G‖_{C^{d+1}} <= C₁⁻¹ρ^{2n-1}N^{-(d-1)}‖U‖^{-n} (ln)",
            ln0(gd1),
            -ln_c1 + (2.0 * nf - 1.0) * ln_rho - (df - 1.0) * ln_n - nf * ln_u0,
        ),
        Inequality::le(
            "rho-vs-kappa: ρ <= C₁⁻¹min(N^{-d}‖U‖^{-(n+1)}, κN^{-τ}) (ln)",
            ln_rho,
            -ln_c1 + (-df * ln_n - (nf + 1.0) * ln_u0).min(omega.kappa.ln() - omega.tau * ln_n),
        ),
    ];
    for h in &hypotheses {
        if !h.pass {
            if params.mode == RunMode::Strict {
                return Err(ReductionError::Hypothesis { step, name: h.name.clone() });
            }
            warnings.push(format!("hypothesis failed: {}", h.name));
        }
    }
    let mut diagnostics = vec![Inequality::le(
        "smallness, proof form: ‖G‖_{C^{d+1}} <= C₁⁻¹ρ^{2n-1}(N‖U‖)^{-dn²} (ln)",
        ln0(gd1),
        -ln_c1 + (2.0 * nf - 1.0) * ln_rho - df * nf * nf * (ln_n + ln_u0),
    )];

    let v = u.truncate(params.n_lat);
    let f = g.truncate(params.n_lat);
    let spectrum: Vec<C64> = (0..n).map(|j| b[(j, j)]).collect();
    let graph = resonance::build_graph(&spectrum, omega, params.n_lat, params.rho, params.mode == RunMode::Strict)?;
    let classes = resonance::analyze_classes(&graph, n)?;
    let node_of: Vec<usize> = spectrum.iter().map(|a| graph.nodes.iter().position(|x| x.value == *a).unwrap_or(0)).collect();
    let positions = |nodes: &[usize]| -> Vec<usize> { (0..n).filter(|&j| nodes.contains(&node_of[j])).collect() };

    if params.rho > 0.0 {
        let f_norm = cr_norm(&f, 0, NormMethod::FourierBound, None);
        let ln_bound = (2.0 * nf - 1.0) * (2.0 / params.rho).ln() + ln0(f_norm);
        let mut worst = f64::NEG_INFINITY;
        for (k, m) in v.modes() {
            for p in 0..graph.nodes.len() {
                for q in 0..graph.nodes.len() {
                    let target = graph.nodes[p].value - graph.nodes[q].value.conj();
                    if resonance::defect(k, &omega.omega, target) < params.rho {
                        continue;
                    }
                    let blk = submatrix(m, &positions(&[p]), &positions(&[q]));
                    worst = worst.max(ln0(linalg::norm(&blk)));
                }
            }
        }
        diagnostics.push(Inequality::le("non-resonant blocks: ‖V̂_p^q(k)‖ <= (2/ρ)^{2n-1}‖F‖ (ln)", worst, ln_bound));
    }

    let v0 = v.coeff(&vec![0; d]);
    let nil = b - linalg::diag(&spectrum);
    let mut sigma_blocks = Vec::new();
    for class in classes.classes.iter().filter(|cl| !cl.odd_loop) {
        let (p1, p2) = (positions(&class.sigma1), positions(&class.sigma2));
        let cm = submatrix(&v0, &p1, &p2);
        let cmp = if p1.len() == p2.len() {
            let xi = linalg::norm(&cm).max(linalg::inverse(&cm).map_or(f64::INFINITY, |ci| linalg::norm(&ci)));
            let n1 = submatrix(&nil, &p1, &p1);
            let n2 = linalg::conj(&submatrix(&nil, &p2, &p2));
            jordan::same_structure(&n1, &n2, &cm, xi).ok()
        } else {
            None
        };
        if cmp.is_none() {
            warnings.push(format!("Σ-block of V̂(0) for class {:?} not comparable", class.nodes));
        }
        sigma_blocks.push(cmp);
    }

    let mut doubling = doubling_conjugation(b, &graph, &classes, omega, params.n_lat, params.rho, params.r_max)?;
    let b2 = doubling.bounds.b_dprime_norm;
    let tol = 1e-12 * (1.0 + linalg::norm(b));
    doubling.inequalities.retain(|i| !i.name.starts_with("‖B″‖"));
    if params.rho > 0.0 {
        doubling.inequalities.push(Inequality::le("‖B″‖ <= 2n²ρ", b2, 2.0 * nf * nf * params.rho));
    }
    diagnostics.push(Inequality::le("‖B″‖ <= 2nρ", b2, 2.0 * nf * params.rho + tol));
    let base = 2.0 * std::f64::consts::PI * nf * params.n_lat as f64;
    for (s, &w) in doubling.bounds.w_cr.iter().enumerate() {
        diagnostics.push(Inequality::le(format!("‖W‖_C^{s} <= (2πnN)^{}", 2 * s), w, base.max(1.0).powi(2 * s as i32)));
    }

    let truncation = truncation_check(u, params.n_lat, params.c_d);
    let mut inequalities = doubling.inequalities.clone();
    if truncation.certified {
        inequalities.push(truncation.conclusion.clone());
    } else {
        diagnostics.push(truncation.conclusion.clone());
    }
    Ok(AlmostRealReport {
        doubling,
        graph,
        classes,
        v,
        f,
        conj_inverse_defect,
        hypotheses,
        diagnostics,
        sigma_blocks,
        truncation,
        inequalities,
        warnings,
    })
}

/// `γ₁ = 1/(4(16mn³)^n)`, `γ_{i+1} = 16mn³γ_i`, for `i = 1..=n+2`.
pub fn gamma_schedule(n: usize, m: usize) -> Vec<f64> {
    let q = 16.0 * (m * n * n * n) as f64;
    let mut out = vec![1.0 / (4.0 * q.powi(n as i32))];
    for i in 0..=n {
        out.push(out[i] * q);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormPolicy {
    /// Overrides `ε = ‖F‖_{C^m}`.
    pub epsilon: Option<f64>,
    pub m: usize,
    pub mode: RunMode,
}

impl Default for NormalFormPolicy {
    fn default() -> Self {
        NormalFormPolicy { epsilon: None, m: 1, mode: RunMode::Diagnostic }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormReport {
    pub triple: ConjugationTriple,
    pub epsilon: f64,
    /// Exponents `γ_i` and thresholds `Γ_i = ε^{γ_i}` actually used.
    pub gamma_exponents: Vec<f64>,
    pub gammas: Vec<f64>,
    pub beta: f64,
    pub separation: spectral::AdaptiveSeparation,
    pub b_hat: CMat,
    pub f_hat: CMat,
    pub jordan: Option<jordan::JordanCertificate>,
    /// `‖MS‖` and `‖(MS)⁻¹‖`.
    pub conj_norm: f64,
    pub conj_inv_norm: f64,
    pub hypotheses: Vec<Inequality>,
    pub inequalities: Vec<Inequality>,
    pub warnings: Vec<String>,
}

/// Whether `b` is upper bidiagonal with unit or zero superdiagonal and equal
/// diagonal entries across every unit link.
pub fn is_jordan_form(b: &CMat) -> bool {
    let n = b.nrows();
    (0..n).all(|i| {
        (0..n).all(|j| {
            if j == i {
                true
            } else if j == i + 1 {
                let e = b[(i, j)];
                e == c(0.0, 0.0) || (e == c(1.0, 0.0) && b[(i, i)] == b[(j, j)])
            } else {
                b[(i, j)] == c(0.0, 0.0)
            }
        })
    })
}

/// Conjugates the constant part to Jordan form: spectral separation with the
/// `Γ_i = ε^{γ_i}` schedule, single-eigenvalue blocks, then a certified
/// Jordan form of the nilpotent part.
pub fn normal_form_steps(cy: &Cocycle, t: &ConjugationTriple, policy: &NormalFormPolicy) -> Result<NormalFormReport> {
    let (n, d) = (cy.n(), cy.d());
    let nf = n as f64;
    let mut warnings = Vec::new();
    let mut epsilon = policy.epsilon.unwrap_or_else(|| cr_norm(&t.f, policy.m, NormMethod::FourierBound, None));
    if !(epsilon < 1.0) {
        return Err(ReductionError::Policy(format!("ε = {epsilon:e} is not below 1")));
    }
    if epsilon <= 0.0 {
        warnings.push("ε = 0, using the smallest positive double".into());
        epsilon = f64::MIN_POSITIVE;
    }
    let ln_eps = epsilon.ln();
    let beta = 1.0 / (4.0 * nf * nf * nf);
    let hypotheses = vec![Inequality::le("‖B‖ <= ε^{-β} (ln)", ln0(linalg::norm(&t.b)), -beta * ln_eps)];
    for h in &hypotheses {
        if !h.pass {
            if policy.mode == RunMode::Strict {
                return Err(ReductionError::Hypothesis { step: 0, name: h.name.clone() });
            }
            warnings.push(format!("hypothesis failed: {}", h.name));
        }
    }

    // Thresholds that underflow are dropped.
    let mut gamma_exponents = Vec::new();
    let mut gammas = Vec::new();
    for g in gamma_schedule(n, policy.m) {
        let v = (g * ln_eps).exp();
        if v > 0.0 && gammas.last().map_or(true, |&p| v < p) {
            gamma_exponents.push(g);
            gammas.push(v);
        }
    }
    if gammas.len() < 2 {
        return Err(ReductionError::Policy(format!("Γ schedule underflows at ε = {epsilon:e}")));
    }
    let separation = spectral::adaptive_separation(&t.b, &gammas)?;
    let sizes = separation.decoupling.block_sizes.clone();
    let (b_hat, f_hat) = spectral::to_single_eigenvalue_blocks(&separation.b, &sizes, gammas[separation.d0])?;
    let diag = linalg::diag(&(0..n).map(|i| b_hat[(i, i)]).collect::<Vec<_>>());
    let nil = &b_hat - &diag;
    let (s, s_inv, j, jordan) = if linalg::max_abs(&nil) == 0.0 {
        (linalg::eye(n), linalg::eye(n), linalg::zeros(n), None)
    } else {
        let cert = jordan::nilpotent_jnf(&nil, &sizes, epsilon, policy.m, &JnfOptions::default())?;
        (cert.s.clone(), cert.s_inv.clone(), cert.j.clone(), Some(cert))
    };
    let ms = &separation.s * &s;
    let ms_inv = &s_inv * &separation.s_inv;
    let b_new = &diag + &j;
    let f_const = &ms_inv * &t.b * &ms - &b_new;
    let f_new = t.f.left_mul(&ms_inv).right_mul(&ms).add(&TrigPoly::constant(d, f_const))?;
    let z_new = t.z.right_mul(&ms);
    let z_inv_new = t.z_inv.left_mul(&ms_inv);
    let mut inverse = t.inverse.clone();
    inverse.max_grid_error = grid_sup_defect(&z_new, &z_inv_new, &linalg::eye(n));
    let triple = ConjugationTriple::with_inverse(cy, z_new, z_inv_new, inverse, b_new, f_new)?;

    let conj_norm = linalg::norm(&ms);
    let conj_inv_norm = linalg::norm(&ms_inv);
    let scale = 1.0 + cr_norm(&triple.z, 0, NormMethod::FourierBound, None) * (1.0 + linalg::norm(&t.b));
    let mut inequalities = separation.decoupling.inequalities.clone();
    if let Some(cert) = &jordan {
        inequalities.extend(cert.inequalities.iter().cloned());
        warnings.extend(cert.warnings.iter().cloned());
    }
    inequalities.push(Inequality::le(
        "residual growth <= ‖MS‖",
        triple.residual_norm,
        conj_norm * t.residual_norm + 1e-12 * scale,
    ));
    if !is_jordan_form(&triple.b) {
        warnings.push("B is not in exact Jordan form".into());
    }
    Ok(NormalFormReport {
        triple,
        epsilon,
        gamma_exponents,
        gammas,
        beta,
        separation,
        b_hat,
        f_hat,
        jordan,
        conj_norm,
        conj_inv_norm,
        hypotheses,
        inequalities,
        warnings,
    })
}

/// `W⁻¹PW` for `W = diag(e^{2iπ⟨m_j,θ⟩})`: entry `(j, l)` moves by `m_l − m_j`.
pub fn phase_conjugate(p: &TrigPoly, modes: &[Mode]) -> TrigPoly {
    shift_entries(p, |j, l| modes[l].iter().zip(&modes[j]).map(|(a, b)| a - b).collect())
}

/// Number of `k ∈ ℤ^d` with `|k|₁ ≤ r`: `Σ_i 2^i C(d,i) C(r,i)`.
pub fn lattice_count(d: usize, r: usize) -> f64 {
    let binom = |a: usize, b: usize| (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64);
    (0..=d.min(r)).map(|i| 2f64.powi(i as i32) * binom(d, i) * binom(r, i)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub mode: RunMode,
    pub n_lattice: Option<usize>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub m: usize,
    pub r_max: usize,
    /// Defaults to [`default_constant`].
    pub c1: Option<f64>,
    pub c_d: Option<f64>,
    pub c_r: f64,
    /// Cap on `|{k : |k|₁ ≤ nN}|`.
    pub max_lattice_points: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            mode: RunMode::Diagnostic,
            n_lattice: None,
            rho: None,
            epsilon: None,
            m: 1,
            r_max: 3,
            c1: None,
            c_d: None,
            c_r: 1.0,
            max_lattice_points: 2e5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the input triple.
    pub step: usize,
    pub op: String,
    pub hypotheses: Vec<Inequality>,
    pub inequalities: Vec<Inequality>,
    pub residual_before: f64,
    pub residual_after: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// The cocycle `(ω/2, A(2·))` the output triples conjugate.
    pub cocycle: Cocycle,
    pub triples: Vec<ConjugationTriple>,
    pub records: Vec<StepRecord>,
    /// `(ρ, N)` used per input triple.
    pub rho: Vec<f64>,
    pub n_lattice: Vec<usize>,
}

fn enforce(mode: RunMode, rec: &mut StepRecord) -> Result<()> {
    for h in &rec.hypotheses {
        if !h.pass {
            if mode == RunMode::Strict {
                return Err(ReductionError::Hypothesis { step: rec.step, name: h.name.clone() });
            }
            let w = format!("hypothesis failed: {}", h.name);
            if !rec.warnings.contains(&w) {
                rec.warnings.push(w);
            }
        }
    }
    for i in &rec.inequalities {
        if !i.pass {
            if mode == RunMode::Strict {
                return Err(ReductionError::Certificate { step: rec.step, name: i.name.clone() });
            }
            rec.warnings.push(format!("certificate failed: {}", i.name));
        }
    }
    Ok(())
}

fn restep(e: ReductionError, step: usize) -> ReductionError {
    match e {
        ReductionError::Hypothesis { name, .. } => ReductionError::Hypothesis { step, name },
        ReductionError::Certificate { name, .. } => ReductionError::Certificate { step, name },
        other => other,
    }
}

/// One input triple through normal form, doubling and realification.
fn pipeline_one(cy: &Cocycle, cy2: &Cocycle, t: &ConjugationTriple, params: &PipelineParams, step: usize, records: &mut Vec<StepRecord>) -> Result<(ConjugationTriple, f64, usize)> {
    let (n, d) = (cy.n(), cy.d());
    let nf = n as f64;
    let mode = params.mode;
    let policy = NormalFormPolicy { epsilon: params.epsilon, m: params.m, mode };
    let nfr = normal_form_steps(cy, t, &policy).map_err(|e| restep(e, step))?;
    let mut rec = StepRecord {
        step,
        op: "normal-form".into(),
        hypotheses: nfr.hypotheses.clone(),
        inequalities: nfr.inequalities.clone(),
        residual_before: t.residual_norm,
        residual_after: nfr.triple.residual_norm,
        warnings: nfr.warnings.clone(),
    };
    enforce(mode, &mut rec)?;
    records.push(rec);
    let t1 = nfr.triple;

    let u = prune(&t1.z_inv.mul(&t1.z.conj())?, PRUNE_REL);
    let c1 = params.c1.unwrap_or_else(|| default_constant(n, d));
    let c_d = params.c_d.unwrap_or(c1);
    let eps_prime = 2.0 * params.c_r * cr_norm(&u, params.m, NormMethod::FourierBound, None) * cr_norm(&t1.f, params.m, NormMethod::FourierBound, None);
    let rho = params.rho.unwrap_or_else(|| if eps_prime == 0.0 { 0.0 } else { (eps_prime.ln() / (2.0 * nf * nf * nf)).exp() });
    let mut warnings = Vec::new();
    let n_lat = match params.n_lattice {
        Some(v) => v,
        None => {
            let want = c1 * cr_norm(&u, d + 1, NormMethod::FourierBound, None) * cr_norm(&u, 0, NormMethod::FourierBound, None);
            let mut v = want.ceil().min(1e9) as usize;
            if lattice_count(d, n * v) > params.max_lattice_points {
                if mode == RunMode::Strict {
                    return Err(ReductionError::Policy(format!("N = {v} exceeds the lattice budget")));
                }
                while v > 1 && lattice_count(d, n * v) > params.max_lattice_points {
                    v = (v / 2).max(1);
                }
                warnings.push(format!("N = {} clamped to {v} by the lattice budget", want.ceil()));
            }
            v
        }
    };
    let mut ap = AlmostRealParams::new(n, d, n_lat, rho);
    ap.c1 = c1;
    ap.c_d = c_d;
    ap.r_max = params.r_max;
    ap.mode = mode;
    let ar = almost_real_step(&u, &t1.b, &cy.omega, &ap, step)?;
    warnings.extend(ar.warnings.iter().cloned());

    // Compose on the doubled cocycle.
    let dbl = &ar.doubling;
    let (p, pa) = (&dbl.p, dbl.p.adjoint());
    let z2 = phase_right(&t1.z.double_angle(), &dbl.modes).right_mul(p);
    let z2_inv = phase_left_inv(&t1.z_inv.double_angle(), &dbl.modes).left_mul(&pa);
    let g = phase_conjugate(&t1.f.double_angle(), &dbl.modes)
        .add(&TrigPoly::constant(d, dbl.b_dprime.clone()))?
        .left_mul(&pa)
        .right_mul(p);
    let mut inverse = t1.inverse.clone();
    inverse.max_grid_error = grid_sup_defect(&z2, &z2_inv, &linalg::eye(n));
    let t2 = ConjugationTriple::with_inverse(cy2, z2, z2_inv, inverse, dbl.b_prime.clone(), prune(&g, PRUNE_REL))?;
    let transported = phase_right(&t1.residual(cy)?.double_angle(), &dbl.modes).right_mul(p);
    let gap = sup_norm(&t2.residual(cy2)?.sub(&transported)?);
    let mut inequalities = ar.inequalities.clone();
    inequalities.push(Inequality::le("composed residual = transported residual", gap, 1e-10 * sup_norm(&transported).max(1.0)));
    let hypotheses = ar.hypotheses.clone();
    let mut rec = StepRecord {
        step,
        op: "almost-real-doubling".into(),
        hypotheses,
        inequalities,
        residual_before: t1.residual_norm,
        residual_after: t2.residual_norm,
        warnings,
    };
    enforce(mode, &mut rec)?;
    for diag in ar.diagnostics.iter().filter(|i| !i.pass) {
        rec.warnings.push(format!("diagnostic failed: {}", diag.name));
    }
    records.push(rec);

    let rr = realify_step(cy2, &t2)?;
    let mut rec = StepRecord {
        step,
        op: "realify".into(),
        hypotheses: Vec::new(),
        inequalities: rr.inequalities.clone(),
        residual_before: t2.residual_norm,
        residual_after: rr.triple.residual_norm,
        warnings: rr.warnings.clone(),
    };
    enforce(mode, &mut rec)?;
    records.push(rec);
    Ok((rr.triple, rho, n_lat))
}

/// Real triples for `(ω/2, A(2·))` from complex triples for a real cocycle.
pub fn full_pipeline(cy: &Cocycle, triples: &[ConjugationTriple], params: &PipelineParams) -> Result<PipelineOutput> {
    if !cy.real_flag {
        return Err(ReductionError::NotReal("cocycle coefficients are not conjugation-symmetric".into()));
    }
    let cy2 = cy.doubled();
    let mut records = Vec::new();
    let dio = cy.omega.check(cy.a.degree().max(1))?;
    if !dio.pass {
        let name = format!("Diophantine condition up to |k| = {}", cy.a.degree().max(1));
        if params.mode == RunMode::Strict {
            return Err(ReductionError::Hypothesis { step: 0, name });
        }
        records.push(StepRecord {
            step: 0,
            op: "diophantine".into(),
            hypotheses: vec![Inequality::le(name.clone(), 1.0, dio.worst_ratio)],
            inequalities: Vec::new(),
            residual_before: f64::NAN,
            residual_after: f64::NAN,
            warnings: vec![format!("hypothesis failed: {name}")],
        });
    }
    if triples.windows(2).any(|w| w[1].residual_norm > w[0].residual_norm) {
        if let Some(r) = records.last_mut() {
            r.warnings.push("triples are not sorted by decreasing residual".into());
        }
    }
    let mut out = Vec::with_capacity(triples.len());
    let mut rhos = Vec::new();
    let mut lats = Vec::new();
    for (step, t) in triples.iter().enumerate() {
        let (t_out, rho, n_lat) = pipeline_one(cy, &cy2, t, params, step, &mut records)?;
        out.push(t_out);
        rhos.push(rho);
        lats.push(n_lat);
    }
    Ok(PipelineOutput { cocycle: cy2, triples: out, records, rho: rhos, n_lattice: lats })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSelection {
    /// `j_m` for `m = 1, 2, …`.
    pub indices: Vec<usize>,
    /// `m(j)` for each selected `j`, as pairs `(j, m)`.
    pub m_of_j: Vec<(usize, usize)>,
    /// Some row had no admissible index after the previous pick.
    pub truncated: bool,
}

/// Greedy diagonal extraction: `j_m` is the smallest `j > j_{m−1}` with
/// `table[m−1][j] ≤ 1/m`.
pub fn select_diagonal(table: &[Vec<f64>]) -> DiagonalSelection {
    let mut indices: Vec<usize> = Vec::new();
    let mut truncated = false;
    for (i, row) in table.iter().enumerate() {
        let bound = 1.0 / (i + 1) as f64;
        let start = indices.last().map_or(0, |&j| j + 1);
        match (start..row.len()).find(|&j| row[j] <= bound) {
            Some(j) => indices.push(j),
            None => {
                truncated = true;
                break;
            }
        }
    }
    let m_of_j = indices.iter().enumerate().map(|(i, &j)| (j, i + 1)).collect();
    DiagonalSelection { indices, m_of_j, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn omega2() -> FrequencyVector {
        FrequencyVector::golden(2, 0.1, 2.0).unwrap()
    }

    fn omega1() -> FrequencyVector {
        FrequencyVector::golden(1, 0.1, 1.0).unwrap()
    }

    fn cmat(rows: &[&[(f64, f64)]]) -> CMat {
        CMat::from_fn(rows.len(), rows.len(), |i, j| c(rows[i][j].0, rows[i][j].1))
    }

    fn const_cocycle(b: &CMat) -> Cocycle {
        Cocycle::new(omega2(), TrigPoly::constant(2, b.clone())).unwrap()
    }

    #[test]
    fn residual_of_constant_and_phase_triples() {
        let b = linalg::from_real(&[vec![1.0, 2.0], vec![0.0, -1.0]]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        assert_eq!(t.residual_norm, 0.0);

        let om = omega2();
        let shift = linalg::eye(2) * c(0.0, 2.0 * PI * om.dot(&[1, 0]));
        let cy = Cocycle::new(om, TrigPoly::constant(2, &b + &shift)).unwrap();
        let z = TrigPoly::monomial(vec![1, 0], linalg::eye(2));
        let r = residual(&cy, &z, &b, &TrigPoly::zero(2, 2)).unwrap();
        assert!(sup_norm(&r) < 1e-14);
    }

    #[test]
    fn trace_normalization_single_mode() {
        let om = omega1();
        let a0 = linalg::from_real(&[vec![0.5, 1.0], vec![-1.0, 0.25]]);
        let mut e11 = linalg::zeros(2);
        e11[(0, 0)] = c(1.0, 0.0);
        let a = TrigPoly::constant(1, a0.clone()).add(&TrigPoly::monomial(vec![1], e11)).unwrap();
        let cy = Cocycle::new(om.clone(), a).unwrap();
        let tn = normalize_trace(&cy).unwrap();
        let want = c(0.5, 0.0) / c(0.0, 2.0 * PI * om.omega[0]);
        assert!((tn.g.coeff(&[1])[(0, 0)] - want).norm() < 1e-14);
        assert!((tn.b.trace().mean()[(0, 0)] - a0.trace()).norm() < 1e-14);
        assert!(tn.b.trace().modes().all(|(k, m)| k[0] == 0 || m[(0, 0)].norm() < 1e-15));
        assert!(tn.residual < 1e-10);

        let b = linalg::from_real(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let tn = normalize_trace(&const_cocycle(&b)).unwrap();
        assert!(tn.z.sub(&TrigPoly::identity(2, 2)).unwrap().is_zero());
    }

    #[test]
    fn det_transport_trivial_and_scalar() {
        let b = linalg::from_real(&[vec![1.0, 2.0], vec![0.0, -1.0]]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let rep = det_transport_check(&cy, &t).unwrap();
        assert!(rep.identity_defect < 1e-14);

        // n = 1: ∂z = (a − b − f)z + r with r the residual.
        let om = omega1();
        let a = TrigPoly::constant(1, CMat::from_element(1, 1, c(0.3, 0.0)));
        let cy = Cocycle::new(om, a).unwrap();
        let z = TrigPoly::identity(1, 1).add(&TrigPoly::scalar_monomial(vec![1], c(0.1, 0.0))).unwrap();
        let f = TrigPoly::scalar_monomial(vec![2], c(0.01, 0.0));
        let t = ConjugationTriple::new(&cy, z, CMat::from_element(1, 1, c(0.2, 0.0)), f).unwrap();
        let rep = det_transport_check(&cy, &t).unwrap();
        assert!(rep.identity_defect < 1e-12, "{rep:?}");
        assert!((rep.transport_defect - sup_norm(&t.residual(&cy).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn lambda_examples() {
        let z = TrigPoly::constant(1, CMat::from_element(1, 1, c(0.0, 1.0)));
        let ch = choose_lambda(&z).unwrap();
        assert!(ch.value.norm() >= 1.0 / 8.0);
        assert!((ch.value.norm() - ch.lambda0.abs()).abs() < 1e-14);

        let r = linalg::from_real(&[vec![2.0, 1.0], vec![1.0, 1.0]]);
        let ch = choose_lambda(&TrigPoly::constant(2, r)).unwrap();
        assert!((ch.value - c(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn realify_examples() {
        let b = linalg::from_real(&[vec![1.0, 0.5], vec![0.0, -1.0]]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let rr = realify_step(&cy, &t).unwrap();
        assert!(rr.triple.z.sub(&TrigPoly::identity(2, 2)).unwrap().is_zero());
        assert!(rr.triple.f.is_zero());
        assert_eq!(rr.triple.residual_norm, 0.0);

        let ph = C64::from_polar(1.0, PI / 3.0);
        let t = ConjugationTriple::new(&cy, TrigPoly::constant(2, linalg::eye(2) * ph), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let rr = realify_step(&cy, &t).unwrap();
        assert!((rr.a - ph).norm() < 1e-15);
        assert!(linalg::max_abs(&(rr.triple.z.mean() - linalg::eye(2))) < 1e-15);
        assert!(rr.triple.z.is_real());
    }

    fn check_commutes(r: &DoublingResult, b: &CMat) {
        for t in [[0.1, 0.7], [0.33, 0.2], [0.9, 0.45]] {
            let w = r.w.eval(&t);
            for m in [b, &r.b_prime_jordan, &r.b_dprime] {
                assert!(linalg::max_abs(&(&w * m - m * &w)) < 1e-11);
            }
        }
    }

    #[test]
    fn doubling_odd_loop_exact() {
        let om = omega2();
        let b = linalg::diag(&[c(0.0, PI), c(0.0, -PI)]);
        let g = resonance::build_graph(&[b[(0, 0)], b[(1, 1)]], &om, 1, 0.0, true).unwrap();
        let rep = resonance::analyze_classes(&g, 2).unwrap();
        let r = doubling_conjugation(&b, &g, &rep, &om, 1, 0.0, 3).unwrap();
        assert_eq!(r.modes, vec![vec![1, 0], vec![-1, 0]]);
        assert_eq!(r.b_dprime, linalg::zeros(2));
        assert!(r.identity_defect < 1e-11);
        assert!(r.b_prime.iter().all(|z| z.im == 0.0));
        assert!(r.inequalities.iter().all(|i| i.pass), "{:?}", r.inequalities);
        check_commutes(&r, &b);
    }

    #[test]
    fn doubling_real_diagonal_is_identity() {
        let om = omega2();
        let b = linalg::diag(&[c(1.0, 0.0), c(-2.0, 0.0), c(0.5, 0.0)]);
        let spec: Vec<C64> = (0..3).map(|i| b[(i, i)]).collect();
        let g = resonance::build_graph(&spec, &om, 2, 0.0, true).unwrap();
        let rep = resonance::analyze_classes(&g, 3).unwrap();
        let r = doubling_conjugation(&b, &g, &rep, &om, 2, 0.0, 3).unwrap();
        assert!(r.w.sub(&TrigPoly::identity(2, 3)).unwrap().is_zero());
        assert!(linalg::max_abs(&(&r.b_prime - &b)) < 1e-15);
        assert_eq!(r.b_dprime, linalg::zeros(3));
    }

    fn bipartite_pair() -> (C64, C64) {
        (c(1.0, 0.1), c(1.0, 2.0 * PI - 0.1))
    }

    #[test]
    fn doubling_bipartite_class() {
        let om = omega2();
        let (al, be) = bipartite_pair();
        let b = linalg::block_diag(&[linalg::jordan_block(2, al), linalg::jordan_block(2, be)]);
        let (n_lat, rho) = (2, 0.1);
        let g = resonance::build_graph(&[al, al, be, be], &om, n_lat, rho, true).unwrap();
        let rep = resonance::analyze_classes(&g, 4).unwrap();
        assert!(rep.classes.iter().all(|cl| !cl.odd_loop));
        let r = doubling_conjugation(&b, &g, &rep, &om, n_lat, rho, 3).unwrap();
        assert!(r.identity_defect < 1e-11);
        assert!(r.bounds.b_dprime_norm <= 2.0 * 4.0 * rho);
        assert!(r.bounds.w_cr[1] <= 4.0 * 4.0 * PI * n_lat as f64);
        assert!(r.inequalities.iter().all(|i| i.pass), "{:?}", r.inequalities);
        assert!(r.b_prime.iter().all(|z| z.im == 0.0));
        assert_eq!(r.structure.len(), 1);
        check_commutes(&r, &b);
        let (wp, bp, bpp) = r.realified();
        let lhs = wp.derivative(&om.half().omega).unwrap().sub(&wp.left_mul(&b)).unwrap().add(&wp.right_mul(&(&bp + &bpp))).unwrap();
        assert!(lhs.modes().all(|(_, m)| linalg::max_abs(m) < 1e-11));
    }

    #[test]
    fn doubling_rejects_structure_mismatch() {
        let om = omega2();
        let (al, be) = bipartite_pair();
        let b = linalg::block_diag(&[linalg::jordan_block(2, al), linalg::diag(&[be, be])]);
        let g = resonance::build_graph(&[al, al, be, be], &om, 2, 0.1, true).unwrap();
        let rep = resonance::analyze_classes(&g, 4).unwrap();
        let err = doubling_conjugation(&b, &g, &rep, &om, 2, 0.1, 3).unwrap_err();
        assert!(matches!(err, ReductionError::Structure(_)));
    }

    #[test]
    fn almost_real_pass_through_and_phase() {
        let om = omega2();
        let b = linalg::diag(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        let rep = almost_real_step(&TrigPoly::identity(2, 2), &b, &om, &AlmostRealParams::new(2, 2, 2, 0.0), 0).unwrap();
        assert!(rep.doubling.w.sub(&TrigPoly::identity(2, 2)).unwrap().is_zero());
        assert_eq!(rep.conj_inverse_defect, 0.0);

        let b = linalg::diag(&[c(0.0, PI), c(0.0, -PI)]);
        let mut u = TrigPoly::monomial(vec![1, 0], linalg::diag(&[c(1.0, 0.0), c(0.0, 0.0)]));
        u.add_to(vec![-1, 0], &linalg::diag(&[c(0.0, 0.0), c(1.0, 0.0)]));
        let rep = almost_real_step(&u, &b, &om, &AlmostRealParams::new(2, 2, 2, 0.1), 0).unwrap();
        assert!(rep.f.is_zero() || cr_norm(&rep.f, 0, NormMethod::FourierBound, None) < 1e-14);
        let blk = rep.diagnostics.iter().find(|i| i.name.starts_with("non-resonant")).unwrap();
        assert!(blk.pass);
        assert!(rep.truncation.conclusion.pass);
    }

    #[test]
    fn almost_real_strict_names_failed_hypothesis() {
        let om = omega2();
        let b = linalg::diag(&[c(1.0, 0.0), c(2.0, 0.0)]);
        let mut p = AlmostRealParams::new(2, 2, 1000, 0.5);
        p.c1 = 1.0;
        p.mode = RunMode::Strict;
        match almost_real_step(&TrigPoly::identity(2, 2), &b, &om, &p, 3) {
            Err(ReductionError::Hypothesis { step, name }) => {
                assert_eq!(step, 3);
                assert!(name.starts_with("rho-vs-kappa"), "{name}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normal_form_examples() {
        let b = linalg::diag(&[c(1.0, 0.0), c(3.0, 0.0)]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let pol = NormalFormPolicy { epsilon: Some(1e-8), ..Default::default() };
        let r = normal_form_steps(&cy, &t, &pol).unwrap();
        assert!(is_jordan_form(&r.triple.b));
        assert!(r.triple.residual_norm < 1e-13);

        let b = cmat(&[&[(1.0, 0.0), (1.0, 0.0)], &[(0.0, 0.0), (1.0 + 1e-9, 0.0)]]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let pol = NormalFormPolicy { epsilon: Some(1e-6), ..Default::default() };
        let r = normal_form_steps(&cy, &t, &pol).unwrap();
        assert_eq!(r.separation.decoupling.block_sizes, vec![2]);
        assert!(is_jordan_form(&r.triple.b));
        assert_eq!(r.triple.b[(0, 1)], c(1.0, 0.0));
        assert!((r.triple.b[(0, 0)] - c(1.0 + 5e-10, 0.0)).norm() < 1e-12);
        assert!(cr_norm(&r.triple.f, 0, NormMethod::FourierBound, None) < 1e-8);
        assert!(r.triple.residual_norm < 1e-12);
        assert!(r.inequalities.iter().find(|i| i.name.starts_with("residual growth")).unwrap().pass);
    }

    #[test]
    fn gamma_schedule_ratio() {
        let g = gamma_schedule(2, 1);
        assert_eq!(g.len(), 4);
        assert!((g[0] - 1.0 / (4.0 * 128.0 * 128.0)).abs() < 1e-20);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - 128.0).abs() < 1e-9));
    }

    #[test]
    fn pipeline_on_constant_cocycle() {
        let b = linalg::from_real(&[vec![1.0, 0.5], vec![0.0, -1.0]]);
        let cy = const_cocycle(&b);
        let t = ConjugationTriple::new(&cy, TrigPoly::identity(2, 2), b.clone(), TrigPoly::zero(2, 2)).unwrap();
        let params = PipelineParams { n_lattice: Some(2), ..Default::default() };
        let out = full_pipeline(&cy, &[t], &params).unwrap();
        let t2 = &out.triples[0];
        assert!(t2.residual_norm < 1e-12, "{}", t2.residual_norm);
        assert!(t2.b.iter().all(|z| z.im == 0.0));
        assert!(t2.z.is_real());
        let spec_in: f64 = b.trace().re;
        assert!((t2.b.trace().re - spec_in).abs() < 1e-12);
    }

    #[test]
    fn select_diagonal_examples() {
        let table: Vec<Vec<f64>> = (0..6).map(|_| (0..40).map(|j| 0.5f64.powi(j)).collect()).collect();
        let sel = select_diagonal(&table);
        assert!(!sel.truncated);
        let mut prev: Option<usize> = None;
        for (i, &j) in sel.indices.iter().enumerate() {
            let m = (i + 1) as f64;
            let ceil = m.log2().ceil() as usize;
            let want = prev.map_or(ceil, |p| ceil.max(p + 1));
            assert_eq!(j, want);
            prev = Some(j);
        }
        let sel = select_diagonal(&[vec![3.0, 0.9, 0.1]]);
        assert_eq!(sel.indices, vec![1]);
        let sel = select_diagonal(&[vec![0.5], vec![0.9, 0.9]]);
        assert!(sel.truncated);
        assert_eq!(sel.indices, vec![0]);
    }

    #[test]
    fn phase_helpers_agree_with_products() {
        let modes = vec![vec![1, 0], vec![0, -2]];
        let w = phase_matrix(2, &modes);
        let mut p = TrigPoly::monomial(vec![1, 1], linalg::from_real(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        p.add_to(vec![0, 0], &linalg::eye(2));
        assert_eq!(phase_right(&p, &modes), p.mul(&w).unwrap());
        let winv = phase_matrix(2, &modes.iter().map(|m| m.iter().map(|x| -x).collect()).collect::<Vec<_>>());
        assert_eq!(phase_left_inv(&p, &modes), winv.mul(&p).unwrap());
        assert_eq!(phase_conjugate(&p, &modes), winv.mul(&p).unwrap().mul(&w).unwrap());
        assert_eq!(phase_cr_norm(&modes, 2), (4.0 * PI).powi(2));
        assert_eq!(lattice_count(2, 3), l1_ball(2, 3).len() as f64);
        assert_eq!(lattice_count(3, 2), l1_ball(3, 2).len() as f64);
    }
}
