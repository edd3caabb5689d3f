//! Spectrum clustering and block decoupling.
//!
//! A matrix is brought to Schur form, its eigenvalues are grouped into
//! Γ-connected clusters, the Schur form is reordered so each cluster is
//! contiguous, and the off-diagonal blocks are removed one cluster at a time
//! by solving `T₁R − RT₄ = −T₂` with back-substitution.

use thiserror::Error;

use crate::certificate::{ln0, Inequality};
use crate::linalg::{self, c, CMat, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("divisor |{a} - {b}| = {divisor:e} is below gamma = {gamma:e}")]
    SmallDivisor { a: C64, b: C64, divisor: f64, gamma: f64 },
    #[error("gamma sequence exhausted after {0} entries without stabilization")]
    Exhausted(usize),
    #[error("block {block} has spread {spread:e} > {limit:e}")]
    Spread { block: usize, spread: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// Γ-connected components of a spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<C64>>,
    /// Positions in the input spectrum, parallel to `clusters`.
    pub indices: Vec<Vec<usize>>,
    pub gamma: f64,
}

impl ClusterPartition {
    /// Cluster index of each input position.
    pub fn labels(&self) -> Vec<usize> {
        let n = self.indices.iter().map(|v| v.len()).sum();
        let mut out = vec![0; n];
        for (ci, idx) in self.indices.iter().enumerate() {
            for &i in idx {
                out[i] = ci;
            }
        }
        out
    }
}

fn lex(a: C64, b: C64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the graph with edges `|α − β| ≤ Γ`, ordered by the
/// (Re, Im)-minimum of each cluster.
pub fn gamma_clusters(spectrum: &[C64], gamma: f64) -> Result<ClusterPartition> {
    if spectrum.is_empty() {
        return Err(SpectralError::EmptySpectrum);
    }
    if !(gamma > 0.0) {
        return Err(SpectralError::InvalidArgument(format!("gamma = {gamma} must be positive")));
    }
    let n = spectrum.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (spectrum[i] - spectrum[j]).norm() <= gamma {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut indices: Vec<Vec<usize>> = groups.into_values().collect();
    for g in indices.iter_mut() {
        g.sort_by(|&a, &b| lex(spectrum[a], spectrum[b]).then(a.cmp(&b)));
    }
    indices.sort_by(|a, b| lex(spectrum[a[0]], spectrum[b[0]]).then(a[0].cmp(&b[0])));
    let clusters = indices.iter().map(|g| g.iter().map(|&i| spectrum[i]).collect()).collect();
    Ok(ClusterPartition { clusters, indices, gamma })
}

/// True when the spectrum forms a single Γ-cluster.
pub fn is_gamma_connected(spectrum: &[C64], gamma: f64) -> bool {
    gamma_clusters(spectrum, gamma).map_or(true, |p| p.clusters.len() == 1)
}

/// Solution of the decoupling equation with its certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoupling {
    pub r: CMat,
    pub min_divisor: f64,
    /// `ln((n₁n₂)(‖T‖/Γ²)^{n₁n₂})`.
    pub ln_entry_bound: f64,
    pub entry_bound: Inequality,
}

/// Solves `T₁R − RT₄ = −T₂` for the split `T = [[T₁, T₂], [0, T₄]]`, rows from
/// the bottom up and columns left to right.
pub fn decouple_blocks(t: &CMat, split: usize, gamma: f64) -> Result<Decoupling> {
    let n = t.nrows();
    if t.ncols() != n || split == 0 || split >= n {
        return Err(SpectralError::InvalidArgument(format!("split {split} invalid for {n}x{}", t.ncols())));
    }
    let (n1, n2) = (split, n - split);
    let mut r = CMat::zeros(n1, n2);
    let mut min_divisor = f64::INFINITY;
    for i in (0..n1).rev() {
        for j in 0..n2 {
            let (a, b) = (t[(i, i)], t[(split + j, split + j)]);
            let div = a - b;
            if div.norm() < gamma {
                return Err(SpectralError::SmallDivisor { a, b, divisor: div.norm(), gamma });
            }
            min_divisor = min_divisor.min(div.norm());
            let mut rhs = -t[(i, split + j)];
            for k in (i + 1)..n1 {
                rhs -= t[(i, k)] * r[(k, j)];
            }
            for l in 0..j {
                rhs += r[(i, l)] * t[(split + l, split + j)];
            }
            r[(i, j)] = rhs / div;
        }
    }
    let p = (n1 * n2) as f64;
    let ln_entry_bound = p.ln() + p * (ln0(linalg::norm(t)) - 2.0 * gamma.ln());
    let max_entry = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let entry_bound = Inequality::le("decoupling entries (ln)", ln0(max_entry), ln_entry_bound);
    Ok(Decoupling { r, min_divisor, ln_entry_bound, entry_bound })
}

/// `M⁻¹BM = D` with `D` block diagonal, blocks upper triangular with
/// Γ-connected, pairwise Γ-separated spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecoupling {
    pub m: CMat,
    pub m_inv: CMat,
    pub d: CMat,
    pub block_sizes: Vec<usize>,
    pub block_spectra: Vec<Vec<C64>>,
    pub gamma: f64,
    /// `ln(n^{3n}(‖B‖/Γ²)^{n³})`.
    pub ln_bound_m: f64,
    /// `‖M⁻¹BM − D‖`.
    pub residual: f64,
    pub min_divisor: f64,
    /// `‖D‖ / ‖B‖`.
    pub norm_ratio: f64,
    /// Must hold: residual and the product bound `Π(1 + ‖R_k‖)`.
    pub inequalities: Vec<Inequality>,
    /// Logged only: the stated worst-case bounds.
    pub asymptotic_bounds: Vec<Inequality>,
}

pub fn separate_spectrum(b: &CMat, gamma: f64) -> Result<BlockDecoupling> {
    let n = b.nrows();
    if b.ncols() != n || n == 0 {
        return Err(SpectralError::InvalidArgument(format!("matrix is {}x{}", b.nrows(), b.ncols())));
    }
    if !(gamma > 0.0) {
        return Err(SpectralError::InvalidArgument(format!("gamma = {gamma} must be positive")));
    }
    let (mut q, mut t) = linalg::schur(b);
    let eig: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let part = gamma_clusters(&eig, gamma)?;
    linalg::reorder_schur(&mut t, &mut q, &part.labels());
    let block_sizes: Vec<usize> = part.clusters.iter().map(|c| c.len()).collect();

    let mut m = q.clone();
    let mut m_inv = q.adjoint();
    let mut ln_product = 0.0;
    let mut min_divisor = f64::INFINITY;
    let mut asymptotic_bounds = Vec::new();
    let mut off = 0;
    for &size in &block_sizes[..block_sizes.len() - 1] {
        let tail = t.view((off, off), (n - off, n - off)).into_owned();
        let dec = decouple_blocks(&tail, size, gamma)?;
        min_divisor = min_divisor.min(dec.min_divisor);
        asymptotic_bounds.push(dec.entry_bound.clone());
        ln_product += linalg::norm(&dec.r).ln_1p();
        let mut step = linalg::eye(n);
        let mut step_inv = linalg::eye(n);
        for i in 0..size {
            for j in 0..(n - off - size) {
                step[(off + i, off + size + j)] = dec.r[(i, j)];
                step_inv[(off + i, off + size + j)] = -dec.r[(i, j)];
            }
        }
        t = &step_inv * &t * &step;
        for i in off..off + size {
            for j in off + size..n {
                t[(i, j)] = c(0.0, 0.0);
            }
        }
        m = &m * &step;
        m_inv = &step_inv * &m_inv;
        off += size;
    }
    let d = t;
    let nb = linalg::norm(b);
    let residual = linalg::norm(&(&m_inv * b * &m - &d));
    let nf = n as f64;
    let ln_bound_m = 3.0 * nf * nf.ln() + nf.powi(3) * (ln0(nb) - 2.0 * gamma.ln());
    let ln_m = ln0(linalg::norm(&m)).max(ln0(linalg::norm(&m_inv)));
    asymptotic_bounds.push(Inequality::le("block conjugation n^{3n}(‖B‖/Γ²)^{n³} (ln)", ln_m, ln_bound_m));
    let inequalities = vec![
        Inequality::le("separation residual", residual, 1e-10 * nb),
        Inequality::le("block conjugation Π(1+‖R‖) (ln)", ln_m, ln_product + 1e-12),
    ];
    let mut block_spectra = Vec::new();
    let mut at = 0;
    for &size in &block_sizes {
        block_spectra.push((at..at + size).map(|i| d[(i, i)]).collect());
        at += size;
    }
    Ok(BlockDecoupling {
        m,
        m_inv,
        norm_ratio: if nb == 0.0 { 1.0 } else { linalg::norm(&d) / nb },
        d,
        block_sizes,
        block_spectra,
        gamma,
        ln_bound_m,
        residual,
        min_divisor,
        inequalities,
        asymptotic_bounds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveSeparation {
    pub s: CMat,
    pub s_inv: CMat,
    pub b: CMat,
    /// First index whose Γ makes every block connected; the conjugation used `Γ_{d0−1}`.
    pub d0: usize,
    pub decoupling: BlockDecoupling,
}

/// Separates with `Γ_0, Γ_1, …` until every block of the separation at `Γ_{i}`
/// is also `Γ_{i+1}`-connected; then `d0 = i + 1`.
pub fn adaptive_separation(a: &CMat, gammas: &[f64]) -> Result<AdaptiveSeparation> {
    if gammas.iter().any(|g| !(*g > 0.0)) || gammas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SpectralError::InvalidArgument("gammas must be positive and strictly decreasing".into()));
    }
    for i in 0..gammas.len().saturating_sub(1) {
        let dec = separate_spectrum(a, gammas[i])?;
        if dec.block_spectra.iter().all(|s| is_gamma_connected(s, gammas[i + 1])) {
            return Ok(AdaptiveSeparation { s: dec.m.clone(), s_inv: dec.m_inv.clone(), b: dec.d.clone(), d0: i + 1, decoupling: dec });
        }
    }
    Err(SpectralError::Exhausted(gammas.len()))
}

/// Splits a block-diagonal `D` into `B̂ + F̂`: each block of `B̂` has the block's
/// mean diagonal value on its diagonal, `F̂` is the diagonal remainder.
pub fn to_single_eigenvalue_blocks(d: &CMat, block_sizes: &[usize], threshold: f64) -> Result<(CMat, CMat)> {
    let n = d.nrows();
    if block_sizes.iter().sum::<usize>() != n {
        return Err(SpectralError::InvalidArgument(format!("block sizes {block_sizes:?} do not partition {n}")));
    }
    let mut b_hat = d.clone();
    let mut f_hat = linalg::zeros(n);
    let limit = n as f64 * threshold;
    let mut at = 0;
    for (bi, &size) in block_sizes.iter().enumerate() {
        let diag: Vec<C64> = (at..at + size).map(|i| d[(i, i)]).collect();
        let mean = diag.iter().sum::<C64>() / size as f64;
        let spread = diag.iter().map(|z| (z - mean).norm()).fold(0.0, f64::max);
        if spread > limit {
            return Err(SpectralError::Spread { block: bi, spread, limit });
        }
        for (k, z) in diag.iter().enumerate() {
            b_hat[(at + k, at + k)] = mean;
            f_hat[(at + k, at + k)] = z - mean;
        }
        at += size;
    }
    Ok((b_hat, f_hat))
}
