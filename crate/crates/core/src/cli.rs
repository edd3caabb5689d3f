//! Command-line front end: case files, the synthetic fixture generator and
//! the command implementations behind `main`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certificate::Inequality;
use crate::harmonics::{interpolate, l1_ball, FrequencyVector, InverseCertificate, Mode, TrigPoly};
use crate::jordan::{self, JnfOptions};
use crate::linalg::{self, c, CMat, MatrixJson, C64};
use crate::reduction::{
    self, budget_radius, Cocycle, CocycleJson, ConjugationTriple, PipelineParams, ReductionError, RunMode, TripleJson,
};
use crate::resonance;
use crate::spectral;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 2;
pub const EXIT_MALFORMED: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    #[serde(default)]
    pub n_lattice: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "three")]
    pub r_max: usize,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

impl Default for CaseParams {
    fn default() -> Self {
        CaseParams { n_lattice: None, rho: None, epsilon: None, m: 1, r_max: 3, mode: RunMode::Diagnostic, seeds: Vec::new() }
    }
}

impl CaseParams {
    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            mode: self.mode,
            n_lattice: self.n_lattice,
            rho: self.rho,
            epsilon: self.epsilon,
            m: self.m,
            r_max: self.r_max,
            ..Default::default()
        }
    }
}

/// A cocycle, its conjugation triples and run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub cocycle: CocycleJson,
    pub triples: Vec<TripleJson>,
    #[serde(default)]
    pub params: CaseParams,
}

impl CaseFile {
    /// Parses the cocycle and triples, checking all shapes against each other.
    pub fn load(&self) -> Result<(Cocycle, Vec<ConjugationTriple>), ReductionError> {
        let cy = self.cocycle.to_cocycle()?;
        let (n, d) = (cy.n(), cy.d());
        let mut ts = Vec::with_capacity(self.triples.len());
        for (i, tj) in self.triples.iter().enumerate() {
            let t = tj.to_triple()?;
            let ok = [&t.z, &t.z_inv, &t.f].iter().all(|p| p.n() == n && p.d() == d) && t.b.shape() == (n, n);
            if !ok {
                return Err(ReductionError::Dimension(format!("triple {i} does not match the {n}x{n} cocycle on T^{d}")));
            }
            ts.push(t);
        }
        Ok((cy, ts))
    }

    pub fn from_parts(cy: &Cocycle, triples: &[ConjugationTriple], params: CaseParams) -> Self {
        CaseFile {
            cocycle: CocycleJson::from_cocycle(cy),
            triples: triples.iter().map(TripleJson::from_triple).collect(),
            params,
        }
    }
}

/// JSON text with every non-integer number written with 17 significant digits.
pub fn to_json_17<T: Serialize>(x: &T) -> String {
    let v = serde_json::to_value(x).expect("serializable");
    let mut out = String::new();
    write_value(&v, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Number(num) if num.is_f64() => {
            out.push_str(&format!("{:.16e}", num.as_f64().unwrap_or(f64::NAN)));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string"));
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Amplitude of the random exponent in [`synth_case`].
pub const SYNTH_AMPLITUDE: f64 = 0.1;

/// Real matrix with eigenvalues spaced by at least 1.5: a diagonal of real
/// values and possibly one rotation block `a ± ib`, `|b| ≥ 0.75`, conjugated
/// by a well-conditioned real matrix.
fn synth_b0(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let mut d = linalg::zeros(n);
    let mut j = 0;
    let mut level = rng.gen_range(-1.0..1.0);
    let with_pair = n >= 2 && rng.gen_bool(0.5);
    while j < n {
        if with_pair && j == 0 {
            let b = rng.gen_range(0.75..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let a = level;
            d[(0, 0)] = c(a, 0.0);
            d[(0, 1)] = c(b, 0.0);
            d[(1, 0)] = c(-b, 0.0);
            d[(1, 1)] = c(a, 0.0);
            level += 2.0 * b.abs() + rng.gen_range(1.5..2.0);
            j = 2;
        } else {
            d[(j, j)] = c(level, 0.0);
            level += rng.gen_range(1.5..2.0);
            j += 1;
        }
    }
    loop {
        let t = CMat::from_fn(n, n, |i, k| c(if i == k { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3), 0.0));
        if let Some(ti) = linalg::inverse(&t) {
            if linalg::norm(&t) * linalg::norm(&ti) < 4.0 {
                return (&t * d * ti).map(|z| c(z.re, 0.0));
            }
        }
    }
}

/// Real trig polynomial of the given degree with coefficients of size `amp`.
fn synth_exponent(n: usize, d: usize, degree: usize, amp: f64, rng: &mut ChaCha8Rng) -> TrigPoly {
    let mut x = TrigPoly::zero(d, n);
    let ball = l1_ball(d, degree);
    let count = ball.len().max(1) as f64;
    for k in ball {
        let neg: Mode = k.iter().map(|v| -v).collect();
        if neg < k {
            continue;
        }
        let m = CMat::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (amp / count.sqrt()));
        if neg == k {
            x.set(k, m.map(|z| c(z.re, 0.0)));
        } else {
            x.set(neg, linalg::conj(&m));
            x.set(k, m);
        }
    }
    x
}

fn exp_on_grid(x: &TrigPoly, s: f64, grid: usize, out: usize) -> TrigPoly {
    let vals: Vec<CMat> = x.eval_grid(grid).into_iter().map(|v| (v * c(s, 0.0)).exp()).collect();
    interpolate(x.d(), x.n(), grid, out, &vals).symmetrize_real()
}

fn synth_gauge(n: usize, complexity: u8, rng: &mut ChaCha8Rng) -> CMat {
    match complexity {
        0 => linalg::eye(n),
        1 => linalg::eye(n) * C64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(0.3..2.8)),
        _ => loop {
            let g = CMat::from_fn(n, n, |i, k| {
                c(if i == k { 1.0 } else { 0.0 }, 0.0) + c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
            });
            if let Some(gi) = linalg::inverse(&g) {
                if linalg::norm(&g) * linalg::norm(&gi) < 6.0 {
                    return g;
                }
            }
        },
    }
}

/// Synthetic case with a known real reduction, see [`synth_case`].
pub fn synth_case_with(
    n: usize,
    d: usize,
    degree: usize,
    gauge_complexity: u8,
    seed: u64,
    amplitude: f64,
) -> Result<CaseFile, ReductionError> {
    if n == 0 || d == 0 {
        return Err(ReductionError::Dimension(format!("n = {n}, d = {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = FrequencyVector::golden(d, 0.05, d as f64 + 1.0)?;
    let b0 = synth_b0(n, &mut rng);
    let x = synth_exponent(n, d, degree, amplitude, &mut rng);
    let g = synth_gauge(n, gauge_complexity, &mut rng);

    let z_deg = budget_radius(d, if x.is_zero() { 0 } else { 6 * degree + 4 });
    let grid = 2 * z_deg + 1;
    let z0 = exp_on_grid(&x, 1.0, grid, z_deg);
    let z0_inv = exp_on_grid(&x, -1.0, grid, z_deg);
    let dz0 = z0.derivative(&omega.omega)?;
    let a_deg = if x.is_zero() { 0 } else { budget_radius(d, 4 * degree) };
    let a_grid = 2 * (z_deg + a_deg) + 1;
    let prod = dz0.add(&z0.right_mul(&b0))?;
    let vals: Vec<CMat> = prod.eval_grid(a_grid).iter().zip(z0_inv.eval_grid(a_grid)).map(|(p, q)| p * q).collect();
    let a = interpolate(d, n, a_grid, a_deg, &vals).symmetrize_real();
    let a = reduction::prune(&a, 1e-17);
    let cy = Cocycle::new(omega, a)?;

    // D = AZ₀ − ∂Z₀ − Z₀B₀ and F₀ = Z₀⁻¹D, so the residual is (Z₀Z₀⁻¹ − I)D.
    let defect = cy.a.mul(&z0)?.sub(&dz0)?.sub(&z0.right_mul(&b0))?;
    let f0 = reduction::prune(&z0_inv.mul(&defect)?, 1e-17);
    let gi = linalg::inverse(&g).ok_or_else(|| ReductionError::Normalization("singular gauge".into()))?;
    let z = z0.right_mul(&g);
    let z_inv = z0_inv.left_mul(&gi);
    let check = 2 * (z.degree() + z_inv.degree()) + 1;
    let (zv, ziv) = (z.eval_grid(check), z_inv.eval_grid(check));
    let mut max_err: f64 = 0.0;
    let mut min_det = f64::INFINITY;
    for (p, q) in zv.iter().zip(&ziv) {
        max_err = max_err.max(linalg::norm(&(p * q - linalg::eye(n))));
        min_det = min_det.min(p.determinant().norm());
    }
    if !(min_det > 1e-8) {
        return Err(ReductionError::Normalization(format!("Z nearly singular on the grid (|det| = {min_det:e})")));
    }
    let inverse = InverseCertificate { max_grid_error: max_err, min_abs_det: min_det, aliasing_warning: false };
    let b = &gi * &b0 * &g;
    let f = f0.left_mul(&gi).right_mul(&g);
    let t = ConjugationTriple::with_inverse(&cy, z, z_inv, inverse, b, f)?;
    let params = CaseParams { seeds: vec![seed], ..Default::default() };
    Ok(CaseFile::from_parts(&cy, &[t], params))
}

/// Seeded synthetic case: real `B₀`, `Z₀ = exp(X)` for a small real trig
/// polynomial `X`, `A` the truncated real generator of `(Z₀, B₀)`, and a
/// constant gauge (`0` none, `1` complex scalar, `2` complex matrix).
pub fn synth_case(n: usize, d: usize, degree: usize, gauge_complexity: u8, seed: u64) -> Result<CaseFile, ReductionError> {
    synth_case_with(n, d, degree, gauge_complexity, seed, SYNTH_AMPLITUDE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Strict,
    Diagnostic,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Strict => RunMode::Strict,
            ModeArg::Diagnostic => RunMode::Diagnostic,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cocycle", version, about = "Certified reduction of quasi-periodic linear cocycles")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the mode stored in a case file.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Grid points per dimension for sup norms.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Lattice radius N of the resonance search; overrides the case file
    #[arg(long = "n-lattice", global = true)]
    pub n_lattice: Option<usize>,
    /// Resonance tolerance ρ; overrides the case file
    #[arg(long, global = true)]
    pub rho: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Residuals, inverse defects and determinant transport of each triple.
    Verify { case: PathBuf },
    /// Certified Jordan form of a nilpotent matrix.
    Jordan {
        matrix: PathBuf,
        /// Block sizes of the diagonal decomposition; one block by default.
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        m: usize,
    },
    /// Adaptive spectral separation with a decreasing threshold list.
    Separate {
        matrix: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
    /// Resonance graph and class analysis of a spectrum.
    Resonances { input: PathBuf },
    /// Full real reduction pipeline on a case file.
    Reduce { case: PathBuf },
    /// Realification of each triple of a case file.
    Realify { case: PathBuf },
    /// Seeded synthetic case file.
    Synth {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value_t = 2)]
        gauge: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SYNTH_AMPLITUDE)]
        amplitude: f64,
    },
}

/// Spectrum input of the `resonances` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub omega: FrequencyVector,
    /// Eigenvalues as `[re, im]` pairs.
    pub spectrum: Vec<C64>,
    #[serde(default)]
    pub n_lattice: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
}

/// Outcome of a command: exit code plus JSON report.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Value,
}

pub fn exit_code(e: &ReductionError) -> i32 {
    match e {
        ReductionError::Hypothesis { .. } => EXIT_HYPOTHESIS,
        ReductionError::Dimension(_) | ReductionError::NotReal(_) => EXIT_MALFORMED,
        _ => EXIT_CERTIFICATE,
    }
}

fn failure(code: i32, msg: String) -> Outcome {
    Outcome { code, report: serde_json::json!({ "error": msg }) }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T, Outcome> {
    let text = std::fs::read_to_string(path).map_err(|e| failure(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| failure(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn read_matrix(path: &PathBuf) -> Result<CMat, Outcome> {
    let mj: MatrixJson = read_json(path)?;
    match mj.to_mat() {
        Some(m) if m.is_square() && m.nrows() > 0 => Ok(m),
        _ => Err(failure(EXIT_MALFORMED, format!("{}: not a square matrix", path.display()))),
    }
}

fn load_case(path: &PathBuf, common: &Common) -> Result<(Cocycle, Vec<ConjugationTriple>, CaseParams), Outcome> {
    let case: CaseFile = read_json(path)?;
    let (cy, ts) = case.load().map_err(|e| failure(EXIT_MALFORMED, e.to_string()))?;
    let mut params = case.params.clone();
    if let Some(m) = common.mode {
        params.mode = m.into();
    }
    if common.n_lattice.is_some() {
        params.n_lattice = common.n_lattice;
    }
    if common.rho.is_some() {
        params.rho = common.rho;
    }
    Ok((cy, ts, params))
}

/// Exit code for a finished report: strict mode fails on any failed inequality.
fn judge(mode: RunMode, inequalities: &[Inequality], mut report: Value) -> Outcome {
    let failed: Vec<&str> = inequalities.iter().filter(|i| !i.pass).map(|i| i.name.as_str()).collect();
    let code = if mode == RunMode::Strict && !failed.is_empty() { EXIT_CERTIFICATE } else { EXIT_OK };
    if !failed.is_empty() {
        report["warnings"] = serde_json::json!(failed.iter().map(|n| format!("certificate failed: {n}")).collect::<Vec<_>>());
    }
    Outcome { code, report }
}

fn mode_of(common: &Common) -> RunMode {
    common.mode.map_or(RunMode::Diagnostic, Into::into)
}

fn lib_err(e: ReductionError) -> Outcome {
    failure(exit_code(&e), e.to_string())
}

pub fn run(cli: &Cli) -> Outcome {
    match execute(cli) {
        Ok(o) | Err(o) => o,
    }
}

fn execute(cli: &Cli) -> Result<Outcome, Outcome> {
    let common = &cli.common;
    match &cli.command {
        Command::Verify { case } => verify(case, common),
        Command::Jordan { matrix, blocks, epsilon, m } => {
            let a = read_matrix(matrix)?;
            let blocks = if blocks.is_empty() { vec![a.nrows()] } else { blocks.clone() };
            let cert = jordan::nilpotent_jnf(&a, &blocks, *epsilon, *m, &JnfOptions::default())
                .map_err(|e| lib_err(e.into()))?;
            let report = serde_json::json!({
                "s": MatrixJson::from_mat(&cert.s),
                "s_inv": MatrixJson::from_mat(&cert.s_inv),
                "j": MatrixJson::from_mat(&cert.j),
                "f_residual": MatrixJson::from_mat(&cert.f_residual),
                "ln_bound_s": cert.ln_bound_s,
                "ln_bound_f": cert.ln_bound_f,
                "k_used": cert.k_used,
                "identity_residual": cert.identity_residual,
                "structure": jordan::jordan_structure(&cert.j, jordan::PATTERN_TOL),
                "inequalities": cert.inequalities,
                "notes": cert.warnings,
            });
            Ok(judge(mode_of(common), &cert.inequalities, report))
        }
        Command::Separate { matrix, gammas } => {
            let a = read_matrix(matrix)?;
            let sep = spectral::adaptive_separation(&a, gammas).map_err(|e| lib_err(e.into()))?;
            let dec = &sep.decoupling;
            let report = serde_json::json!({
                "d0": sep.d0,
                "m": MatrixJson::from_mat(&sep.s),
                "m_inv": MatrixJson::from_mat(&sep.s_inv),
                "d": MatrixJson::from_mat(&sep.b),
                "block_sizes": dec.block_sizes,
                "block_spectra": dec.block_spectra,
                "residual": dec.residual,
                "ln_bound_m": dec.ln_bound_m,
                "inequalities": dec.inequalities,
            });
            Ok(judge(mode_of(common), &dec.inequalities, report))
        }
        Command::Resonances { input } => {
            let sf: SpectrumFile = read_json(input)?;
            let n_lat = common.n_lattice.or(sf.n_lattice).unwrap_or(1);
            let rho = common.rho.or(sf.rho).unwrap_or(0.0);
            let mode = mode_of(common);
            let g = resonance::build_graph(&sf.spectrum, &sf.omega, n_lat, rho, mode == RunMode::Strict)
                .map_err(|e| lib_err(e.into()))?;
            let rep = resonance::analyze_classes(&g, sf.spectrum.len()).map_err(|e| lib_err(e.into()))?;
            let report = serde_json::json!({ "graph": g, "classes": rep, "inequalities": rep.inequalities });
            Ok(judge(mode, &rep.inequalities, report))
        }
        Command::Reduce { case } => {
            let (cy, ts, params) = load_case(case, common)?;
            let out = reduction::full_pipeline(&cy, &ts, &params.pipeline()).map_err(lib_err)?;
            let all: Vec<Inequality> = out.records.iter().flat_map(|r| r.inequalities.iter().cloned()).collect();
            let final_case = CaseFile::from_parts(&out.cocycle, &out.triples, params.clone());
            let report = serde_json::json!({
                "steps": out.records,
                "rho": out.rho,
                "n_lattice": out.n_lattice,
                "output": final_case,
            });
            Ok(judge(params.mode, &all, report))
        }
        Command::Realify { case } => {
            let (cy, ts, params) = load_case(case, common)?;
            let mut steps = Vec::new();
            let mut all = Vec::new();
            let mut outs = Vec::new();
            for (i, t) in ts.iter().enumerate() {
                let rr = reduction::realify_step(&cy, t).map_err(lib_err)?;
                all.extend(rr.inequalities.iter().cloned());
                steps.push(serde_json::json!({
                    "step": i,
                    "op": "realify",
                    "lambda0": rr.lambda.lambda0,
                    "inequalities": rr.inequalities,
                    "residual_before": t.residual_norm,
                    "residual_after": rr.triple.residual_norm,
                    "warnings": rr.warnings,
                }));
                outs.push(rr.triple);
            }
            let report = serde_json::json!({ "steps": steps, "output": CaseFile::from_parts(&cy, &outs, params.clone()) });
            Ok(judge(params.mode, &all, report))
        }
        Command::Synth { n, d, degree, gauge, seed, amplitude } => {
            let case = synth_case_with(*n, *d, *degree, *gauge, *seed, *amplitude).map_err(lib_err)?;
            Ok(Outcome { code: EXIT_OK, report: serde_json::to_value(&case).expect("serializable") })
        }
    }
}

fn verify(path: &PathBuf, common: &Common) -> Result<Outcome, Outcome> {
    let (cy, ts, params) = load_case(path, common)?;
    let mut steps = Vec::new();
    let mut all = Vec::new();
    for (i, t) in ts.iter().enumerate() {
        let r = t.residual(&cy).map_err(lib_err)?;
        let sup = match common.grid {
            Some(g) => crate::harmonics::cr_norm(&r, 0, crate::harmonics::NormMethod::GridSup, Some(g)),
            None => reduction::sup_norm(&r),
        };
        let dt = reduction::det_transport_check(&cy, t).map_err(lib_err)?;
        let scale = 1.0 + reduction::sup_norm(&t.z).powi(cy.n() as i32);
        let ineq = vec![
            Inequality::le("stored residual matches recomputation", (sup - t.residual_norm).abs(), 1e-12 * (1.0 + sup)),
            Inequality::le("Z Z⁻¹ grid error", t.inverse_defect(), 1e-8),
            Inequality::le("determinant transport identity", dt.identity_defect, 1e-9 * scale),
        ];
        all.extend(ineq.iter().cloned());
        steps.push(serde_json::json!({
            "step": i,
            "op": "verify",
            "inequalities": ineq,
            "residual_before": t.residual_norm,
            "residual_after": sup,
            "det_transport": dt,
        }));
    }
    Ok(judge(params.mode, &all, serde_json::json!({ "steps": steps })))
}
