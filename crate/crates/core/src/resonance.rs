//! Resonances between eigenvalues.
//!
//! `α` and `β` are (N, ρ)-linked when `|2iπ⟨k,ω⟩ − (α − β̄)| < ρ` for some
//! `|k|₁ ≤ N`. Linked classes are the components of the link graph; a class
//! contains an odd loop iff its graph is not bipartite. For every node a
//! composed witness `k_i` is built from chains of links, which is what the
//! period-doubling conjugation consumes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::Inequality;
use crate::harmonics::{dot, l1, l1_ball, FrequencyVector, Mode};
use crate::linalg::{c, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("two witnesses {k1:?} and {k2:?} within rho for nodes ({i}, {j})")]
    DuplicateWitness { i: usize, j: usize, k1: Mode, k2: Mode },
    #[error("nodes without any link: {0:?}")]
    StarPropertyFails(Vec<usize>),
    #[error("chain of length {len} exceeds {max}")]
    ChainTooLong { len: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, ResonanceError>;

/// Best lattice witness for the pair `(α, β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceWitness {
    pub k: Mode,
    pub defect: f64,
    pub n_used: usize,
}

/// `|2iπ⟨k,ω⟩ − target|`.
pub fn defect(k: &[i64], omega: &[f64], target: C64) -> f64 {
    (c(0.0, 2.0 * std::f64::consts::PI * dot(k, omega)) - target).norm()
}

fn scan(target: C64, omega: &[f64], n: usize) -> (ResonanceWitness, Option<(Mode, f64)>) {
    let mut best: Option<(Mode, f64)> = None;
    let mut second: Option<(Mode, f64)> = None;
    for k in l1_ball(omega.len(), n) {
        let dv = defect(&k, omega, target);
        match &best {
            Some((_, b)) if dv >= *b => {
                if second.as_ref().map_or(true, |(_, s)| dv < *s) {
                    second = Some((k, dv));
                }
            }
            _ => {
                second = best.take();
                best = Some((k, dv));
            }
        }
    }
    let (k, dv) = best.expect("ball contains k = 0");
    (ResonanceWitness { k, defect: dv, n_used: n }, second)
}

/// Exhaustive scan of `|k|₁ ≤ N` minimizing `|2iπ⟨k,ω⟩ − (α − β̄)|`; ties keep
/// the lexicographically first `k`.
pub fn best_witness(alpha: C64, beta: C64, omega: &FrequencyVector, n: usize) -> ResonanceWitness {
    scan(alpha - beta.conj(), &omega.omega, n).0
}

/// One eigenvalue with its multiplicity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub value: C64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub witness: ResonanceWitness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceGraph {
    pub nodes: Vec<Node>,
    /// Both orientations are listed; self-links appear once.
    pub edges: Vec<Edge>,
    pub n: usize,
    pub rho: f64,
    pub omega: Vec<f64>,
    /// Every node has at least one link.
    pub star: bool,
    /// `ρ < (2N)^{-τ}κ`, the hypothesis that makes witnesses unique.
    pub uniqueness_hypothesis: bool,
}

impl ResonanceGraph {
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let m = self.nodes.len();
        let mut adj = vec![vec![false; m]; m];
        for e in &self.edges {
            adj[e.i][e.j] = true;
            adj[e.j][e.i] = true;
        }
        adj
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }
}

fn is_link(defect: f64, rho: f64) -> bool {
    if rho == 0.0 {
        defect == 0.0
    } else {
        defect < rho
    }
}

/// All-pairs witness scan (self-pairs included). Equal eigenvalues are merged
/// into one node with multiplicity. With `certified`, a second witness within
/// `ρ` is an error.
pub fn build_graph(spectrum: &[C64], omega: &FrequencyVector, n: usize, rho: f64, certified: bool) -> Result<ResonanceGraph> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(ResonanceError::InvalidArgument(format!("rho = {rho}")));
    }
    let mut nodes: Vec<Node> = Vec::new();
    for &z in spectrum {
        match nodes.iter_mut().find(|x| x.value == z) {
            Some(x) => x.multiplicity += 1,
            None => nodes.push(Node { value: z, multiplicity: 1 }),
        }
    }
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in i..nodes.len() {
            let (w, second) = scan(nodes[i].value - nodes[j].value.conj(), &omega.omega, n);
            if !is_link(w.defect, rho) {
                continue;
            }
            if certified {
                if let Some((k2, d2)) = second {
                    if is_link(d2, rho) {
                        return Err(ResonanceError::DuplicateWitness { i, j, k1: w.k, k2 });
                    }
                }
            }
            // The defect is symmetric in (α, β) with the same k.
            if i != j {
                edges.push(Edge { i: j, j: i, witness: w.clone() });
            }
            edges.push(Edge { i, j, witness: w });
        }
    }
    edges.sort_by_key(|e| (e.i, e.j));
    let mut linked = vec![false; nodes.len()];
    for e in &edges {
        linked[e.i] = true;
        linked[e.j] = true;
    }
    let uniqueness_hypothesis = rho < (2.0 * n as f64).powf(-omega.tau) * omega.kappa;
    Ok(ResonanceGraph { nodes, edges, n, rho, omega: omega.omega.clone(), star: linked.iter().all(|&b| b), uniqueness_hypothesis })
}

/// Connected components, each sorted, ordered by smallest member.
pub fn components(adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let m = adj.len();
    let mut seen = vec![false; m];
    let mut out = Vec::new();
    for s in 0..m {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// BFS 2-coloring of the component containing `root`; `None` if it is not bipartite.
pub fn two_color(adj: &[Vec<bool>], root: usize) -> Option<Vec<Option<u8>>> {
    let mut color = vec![None; adj.len()];
    color[root] = Some(0u8);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let cu = color[u].unwrap();
        for v in 0..adj.len() {
            if !adj[u][v] {
                continue;
            }
            match color[v] {
                None => {
                    color[v] = Some(1 - cu);
                    queue.push_back(v);
                }
                Some(cv) if cv == cu => return None,
                _ => {}
            }
        }
    }
    Some(color)
}

/// Shortest walk from `from` to `to` whose length has the given parity,
/// as the list of visited nodes (BFS on the parity double cover).
pub fn parity_walk(adj: &[Vec<bool>], from: usize, to: usize, odd: bool) -> Option<Vec<usize>> {
    let m = adj.len();
    let mut prev: Vec<[Option<(usize, usize)>; 2]> = vec![[None, None]; m];
    let mut seen = vec![[false; 2]; m];
    seen[from][0] = true;
    let mut queue = VecDeque::from([(from, 0usize)]);
    let goal = (to, odd as usize);
    while let Some((u, p)) = queue.pop_front() {
        if (u, p) == goal && !(u == from && p == 0 && odd) {
            break;
        }
        for v in 0..m {
            if adj[u][v] && !seen[v][1 - p] {
                seen[v][1 - p] = true;
                prev[v][1 - p] = Some((u, p));
                queue.push_back((v, 1 - p));
            }
        }
    }
    if !seen[goal.0][goal.1] {
        return None;
    }
    let mut walk = vec![goal.0];
    let mut cur = goal;
    while cur != (from, 0) {
        cur = prev[cur.0][cur.1].expect("BFS parent");
        walk.push(cur.0);
    }
    walk.reverse();
    Some(walk)
}

/// Composition of a chain `α_1, …, α_r` with witnesses `k_j` for the links
/// `(α_j, α_{j+1})`: `k = Σ_{j odd} k_j − Σ_{j even} k_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedWitness {
    pub k: Mode,
    /// `Σ` of the link defects, the triangle-inequality bound.
    pub defect_bound: f64,
    /// `Σ |k_j|₁ ≤ len·N`.
    pub n_bound: usize,
    pub len: usize,
}

fn compose_unchecked(witnesses: &[ResonanceWitness]) -> ComposedWitness {
    let d = witnesses.first().map_or(0, |w| w.k.len());
    let mut k = vec![0i64; d];
    let mut defect_bound = 0.0;
    let mut n_bound = 0;
    for (j, w) in witnesses.iter().enumerate() {
        // Positions are 1-based in the composition rule.
        let sign = if j % 2 == 0 { 1 } else { -1 };
        for (a, b) in k.iter_mut().zip(&w.k) {
            *a += sign * b;
        }
        defect_bound += w.defect;
        n_bound += w.n_used;
    }
    ComposedWitness { k, defect_bound, n_bound, len: witnesses.len() }
}

/// Chain composition for chains of length at most `max_len`.
pub fn compose_chain(witnesses: &[ResonanceWitness], max_len: usize) -> Result<ComposedWitness> {
    if witnesses.is_empty() {
        return Err(ResonanceError::InvalidArgument("empty chain".into()));
    }
    if witnesses.len() > max_len {
        return Err(ResonanceError::ChainTooLong { len: witnesses.len(), max: max_len });
    }
    Ok(compose_unchecked(witnesses))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseTag {
    OddLoop,
    #[serde(rename = "bipartite-S1")]
    BipartiteS1,
    #[serde(rename = "bipartite-S2")]
    BipartiteS2,
}

/// Witness of node `i` for the doubling construction.
///
/// Targets: `α_i − ᾱ_i` (odd loop), `α_i − α_0` (Σ1), `α_i − ᾱ_0` (Σ2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeWitness {
    pub node: usize,
    pub case: CaseTag,
    /// Witness used downstream: the lattice minimizer over `|k|₁ ≤ nN`, never
    /// worse than the composed one when the latter lies in that ball.
    pub k: Mode,
    pub defect: f64,
    /// Witness composed along the chain, with its own defect and bounds.
    pub composed: ComposedWitness,
    pub composed_defect: f64,
    pub chain: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraPartLink {
    pub i: usize,
    pub j: usize,
    pub k: Mode,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub nodes: Vec<usize>,
    pub odd_loop: bool,
    pub anchor: Option<usize>,
    pub sigma1: Vec<usize>,
    pub sigma2: Vec<usize>,
    pub witnesses: Vec<NodeWitness>,
    /// `β` and `γ̄` linked for `β, γ` in the same part; diagnostics only.
    pub intra_part_links: Vec<IntraPartLink>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassInfo>,
    /// Matrix dimension `n` used in the `nN`, `nρ` bounds.
    pub n: usize,
    /// `|k_i|₁ ≤ nN` and `defect ≤ nρ` for every node witness.
    pub inequalities: Vec<Inequality>,
}

impl ClassReport {
    pub fn witness(&self, node: usize) -> Option<&NodeWitness> {
        self.classes.iter().flat_map(|c| &c.witnesses).find(|w| w.node == node)
    }
}

fn lex(a: C64, b: C64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn chain_witnesses(g: &ResonanceGraph, walk: &[usize]) -> Vec<ResonanceWitness> {
    walk.windows(2).map(|w| g.edge(w[0], w[1]).expect("walk follows edges").witness.clone()).collect()
}

fn node_witness(g: &ResonanceGraph, node: usize, case: CaseTag, walk: Vec<usize>, target: C64, n_dim: usize) -> NodeWitness {
    let composed = compose_unchecked(&chain_witnesses(g, &walk));
    let composed_defect = if walk.len() == 1 { target.norm() } else { defect(&composed.k, &g.omega, target) };
    let composed = if walk.len() == 1 {
        ComposedWitness { k: vec![0; g.omega.len()], defect_bound: 0.0, n_bound: 0, len: 0 }
    } else {
        composed
    };
    let (scanned, _) = scan(target, &g.omega, n_dim * g.n);
    let (k, dv) = if scanned.defect <= composed_defect || l1(&composed.k) as usize > n_dim * g.n {
        (scanned.k, scanned.defect)
    } else {
        (composed.k.clone(), composed_defect)
    };
    NodeWitness { node, case, k, defect: dv, composed, composed_defect, chain: walk }
}

/// Classes, odd loops, bipartitions and per-node composed witnesses. `n_dim`
/// is the matrix dimension entering the `nN`, `nρ` bounds.
pub fn analyze_classes(g: &ResonanceGraph, n_dim: usize) -> Result<ClassReport> {
    let adj = g.adjacency();
    let uncovered: Vec<usize> = (0..g.nodes.len()).filter(|&i| !adj[i].iter().any(|&b| b)).collect();
    if !uncovered.is_empty() {
        return Err(ResonanceError::StarPropertyFails(uncovered));
    }
    let n_dim = n_dim.max(1);
    let mut classes = Vec::new();
    let mut inequalities = Vec::new();
    for comp in components(&adj) {
        let anchor = *comp.iter().min_by(|&&a, &&b| lex(g.nodes[a].value, g.nodes[b].value).then(a.cmp(&b))).unwrap();
        let coloring = two_color(&adj, anchor);
        let mut info = ClassInfo {
            nodes: comp.clone(),
            odd_loop: coloring.is_none(),
            anchor: None,
            sigma1: Vec::new(),
            sigma2: Vec::new(),
            witnesses: Vec::new(),
            intra_part_links: Vec::new(),
        };
        match coloring {
            None => {
                for &v in &comp {
                    let walk = parity_walk(&adj, v, v, true).expect("odd closed walk in non-bipartite class");
                    let a = g.nodes[v].value;
                    info.witnesses.push(node_witness(g, v, CaseTag::OddLoop, walk, a - a.conj(), n_dim));
                }
            }
            Some(color) => {
                info.anchor = Some(anchor);
                let a0 = g.nodes[anchor].value;
                for &v in &comp {
                    let a = g.nodes[v].value;
                    if color[v] == Some(0) {
                        info.sigma1.push(v);
                        let walk = parity_walk(&adj, v, anchor, false).unwrap();
                        let mut w = node_witness(g, v, CaseTag::BipartiteS1, walk, a - a0, n_dim);
                        if v == anchor {
                            w.k = vec![0; g.omega.len()];
                            w.defect = 0.0;
                        }
                        info.witnesses.push(w);
                    } else {
                        info.sigma2.push(v);
                        let walk = parity_walk(&adj, v, anchor, true).unwrap();
                        info.witnesses.push(node_witness(g, v, CaseTag::BipartiteS2, walk, a - a0.conj(), n_dim));
                    }
                }
                for part in [&info.sigma1, &info.sigma2] {
                    for (x, &i) in part.iter().enumerate() {
                        for &j in &part[x + 1..] {
                            let walk = parity_walk(&adj, i, j, false).unwrap();
                            let comp_w = compose_unchecked(&chain_witnesses(g, &walk));
                            let target = g.nodes[i].value - g.nodes[j].value;
                            info.intra_part_links.push(IntraPartLink { i, j, defect: defect(&comp_w.k, &g.omega, target), k: comp_w.k });
                        }
                    }
                }
            }
        }
        for w in &info.witnesses {
            inequalities.push(Inequality::le(format!("node {} |k| <= nN", w.node), l1(&w.k) as f64, (n_dim * g.n) as f64));
            inequalities.push(Inequality::le(format!("node {} defect <= n rho", w.node), w.defect, n_dim as f64 * g.rho));
            inequalities.push(Inequality::le(
                format!("node {} composed defect <= sum of link defects", w.node),
                w.composed_defect,
                w.composed.defect_bound + 1e-12 * (1.0 + w.composed.k.iter().map(|x| x.abs() as f64).sum::<f64>()),
            ));
        }
        classes.push(info);
    }
    Ok(ClassReport { classes, n: n_dim, inequalities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn golden() -> FrequencyVector {
        FrequencyVector::golden(2, 0.1, 1.5).unwrap()
    }

    #[test]
    fn witness_examples() {
        let om = golden();
        let w = best_witness(c(0.7, 0.0), c(0.7, 0.0), &om, 3);
        assert_eq!(w.k, vec![0, 0]);
        assert_eq!(w.defect, 0.0);

        let a = c(0.0, PI);
        let w = best_witness(a, a, &om, 3);
        assert_eq!(w.k, vec![1, 0]);
        assert!(w.defect < 1e-15);

        let a = c(0.3, 0.1);
        let w = best_witness(a, a, &om, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ball = l1_ball(2, 4);
        for _ in 0..50 {
            let k = &ball[rng.gen_range(0..ball.len())];
            assert!(w.defect <= defect(k, &om.omega, a - a.conj()));
        }
    }

    #[test]
    fn witness_symmetry() {
        let om = golden();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-8.0..8.0));
            let b = c(rng.gen_range(-1.0..1.0), rng.gen_range(-8.0..8.0));
            let (x, y) = (best_witness(a, b, &om, 3), best_witness(b, a, &om, 3));
            assert_eq!(x.defect, y.defect);
            assert_eq!(x.k, y.k);
        }
    }

    #[test]
    fn graph_examples() {
        let om = golden();
        let g = build_graph(&[c(0.0, 0.0)], &om, 2, 0.1, false).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].witness.k, vec![0, 0]);

        let g = build_graph(&[c(0.0, PI), c(0.0, -PI)], &om, 2, 0.1, false).unwrap();
        assert_eq!(g.edge(0, 0).unwrap().witness.k, vec![1, 0]);
        let e = g.edge(0, 1).unwrap();
        assert_eq!(e.witness.k, vec![0, 0]);
        assert_eq!(e.witness.defect, 0.0);
        assert!(g.star);

        let g = build_graph(&[c(0.0, 0.0), c(0.0, 0.1234)], &om, 1, 0.01, false).unwrap();
        assert!(!g.star);
        assert!(matches!(analyze_classes(&g, 2), Err(ResonanceError::StarPropertyFails(v)) if v == vec![1]));
    }

    #[test]
    fn class_examples() {
        let om = golden();
        let g = build_graph(&[c(1.0, 0.0)], &om, 2, 0.1, false).unwrap();
        let r = analyze_classes(&g, 1).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert!(r.classes[0].odd_loop);
        assert_eq!(r.classes[0].witnesses[0].k, vec![0, 0]);

        // α, β with α − β̄ = 0 but neither self-linked: α = 1 + 0.3i, β = 1 − 0.3i.
        let g = build_graph(&[c(1.0, -0.3), c(1.0, 0.3)], &om, 1, 0.05, false).unwrap();
        let r = analyze_classes(&g, 2).unwrap();
        let cl = &r.classes[0];
        assert!(!cl.odd_loop);
        assert_eq!(cl.sigma1, vec![0]);
        assert_eq!(cl.sigma2, vec![1]);
        assert!(r.inequalities.iter().all(|i| i.pass));
    }

    #[test]
    fn compose_examples() {
        let w1 = ResonanceWitness { k: vec![1, 2], defect: 0.01, n_used: 3 };
        let w2 = ResonanceWitness { k: vec![0, 1], defect: 0.02, n_used: 3 };
        assert_eq!(compose_chain(&[w1.clone()], 2).unwrap().k, vec![1, 2]);
        let cw = compose_chain(&[w1.clone(), w2.clone()], 2).unwrap();
        assert_eq!(cw.k, vec![1, 1]);
        assert!((cw.defect_bound - 0.03).abs() < 1e-15);
        assert!(matches!(compose_chain(&[w1.clone(), w2, w1], 2), Err(ResonanceError::ChainTooLong { .. })));
    }

    #[test]
    fn exact_three_chain() {
        // α_1 − ᾱ_2 = 2iπ⟨k_1,ω⟩, α_2 − ᾱ_3 = 2iπ⟨k_2,ω⟩, α_3 − ᾱ_4 = 2iπ⟨k_3,ω⟩.
        let om = golden();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let ks: Vec<Mode> = (0..3).map(|_| vec![rng.gen_range(-2..=2), rng.gen_range(-2..=2)]).collect();
            let mut alphas = vec![c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))];
            for k in &ks {
                let prev = *alphas.last().unwrap();
                alphas.push((prev - c(0.0, 2.0 * PI * om.dot(k))).conj());
            }
            let ws: Vec<ResonanceWitness> = ks
                .iter()
                .zip(alphas.windows(2))
                .map(|(k, a)| ResonanceWitness { k: k.clone(), defect: defect(k, &om.omega, a[0] - a[1].conj()), n_used: 4 })
                .collect();
            let cw = compose_chain(&ws, 3).unwrap();
            let d = defect(&cw.k, &om.omega, alphas[0] - alphas[3].conj());
            assert!(d < 1e-12, "{d}");
        }
    }

    #[test]
    fn parity_walks() {
        // Triangle 1-2-3 with pendant 0-1.
        let mut adj = vec![vec![false; 4]; 4];
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 1)] {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        let w = parity_walk(&adj, 0, 0, true).unwrap();
        assert_eq!(w.len() - 1, 5);
        assert_eq!(parity_walk(&adj, 0, 1, false).unwrap().len() - 1, 4);
        assert!(two_color(&adj, 0).is_none());
    }
}
