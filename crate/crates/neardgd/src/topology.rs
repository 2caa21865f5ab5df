//! Graph families and consensus matrices.
//!
//! Consensus matrices are built with Metropolis–Hastings weights, which
//! satisfy symmetry, double stochasticity and the sparsity contract for any
//! connected graph, and keep every diagonal entry positive so the smallest
//! eigenvalue stays above −1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

/// Maximum number of redraws before Erdős–Rényi generation gives up on
/// finding a connected sample.
pub const ER_RETRY_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    Complete,
    Ring,
    Path,
    /// Node i adjacent to i±1, …, i±k/2 (mod n); k must be even.
    KCyclic(usize),
    ErdosRenyi(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n: usize,
    /// Unordered pairs stored once as (i, j) with i < j.
    pub edges: BTreeSet<(usize, usize)>,
    pub kind: GraphKind,
}

impl Graph {
    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.contains(&key)
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.n, &self.edges)
    }
}

fn is_connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

pub fn build_graph(kind: GraphKind, n: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Parameter(format!("graph needs n >= 2, got {n}")));
    }
    let mut edges = BTreeSet::new();
    match kind {
        GraphKind::Complete => {
            for i in 0..n {
                for j in (i + 1)..n {
                    edges.insert((i, j));
                }
            }
        }
        GraphKind::Path => {
            for i in 0..n - 1 {
                edges.insert((i, i + 1));
            }
        }
        GraphKind::Ring => {
            if n == 2 {
                edges.insert((0, 1));
            } else {
                for i in 0..n {
                    let j = (i + 1) % n;
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        GraphKind::KCyclic(k) => {
            if k == 0 || k % 2 != 0 || k >= n {
                return Err(Error::Parameter(format!(
                    "k_cyclic needs even k with 0 < k < n, got k={k}, n={n}"
                )));
            }
            for i in 0..n {
                for d in 1..=k / 2 {
                    let j = (i + d) % n;
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        GraphKind::ErdosRenyi(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Parameter(format!(
                    "erdos_renyi needs 0 < p_edge <= 1, got {p}"
                )));
            }
            let stream = RngStream::new(seed);
            let mut found = false;
            for attempt in 0..ER_RETRY_CAP {
                let mut rng = stream.substream(Purpose::Graph, 0, attempt as u64, 0);
                edges.clear();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < p {
                            edges.insert((i, j));
                        }
                    }
                }
                if is_connected(n, &edges) {
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::Generation(format!(
                    "no connected Erdős–Rényi sample in {ER_RETRY_CAP} attempts (n={n}, p={p})"
                )));
            }
        }
    }
    let g = Graph { n, edges, kind };
    debug_assert!(g.is_connected());
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    pub w: DMatrix<f64>,
    /// Sorted ascending: λ_n ≤ … ≤ λ_1 = 1.
    pub eigenvalues: Vec<f64>,
    /// max{|λ_2|, |λ_n|}, in [0, 1).
    pub beta: f64,
}

impl ConsensusMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// One averaging round applied to per-node vectors: out_i = Σ_l w_il in_l.
    pub fn mix(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n();
        assert_eq!(xs.len(), n);
        (0..n)
            .map(|i| {
                let mut acc = DVector::zeros(xs[0].len());
                for l in 0..n {
                    let wil = self.w[(i, l)];
                    if wil != 0.0 {
                        acc.axpy(wil, &xs[l], 1.0);
                    }
                }
                acc
            })
            .collect()
    }

    /// Plain-text serialization: one "i j w_ij" triple per nonzero entry of
    /// the upper triangle plus diagonal, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            for j in i..self.n() {
                let w = self.w[(i, j)];
                if w != 0.0 {
                    writeln!(out, "{i} {j} {w:.16e}").unwrap();
                }
            }
        }
        out
    }
}

pub fn metropolis_weights(g: &Graph) -> Result<ConsensusMatrix> {
    if !g.is_connected() {
        return Err(Error::Parameter("graph must be connected".into()));
    }
    let n = g.n;
    let deg: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in &g.edges {
        let wij = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    from_matrix(w, g)
}

fn from_matrix(w: DMatrix<f64>, g: &Graph) -> Result<ConsensusMatrix> {
    let n = w.nrows();
    for i in 0..n {
        let row: f64 = w.row(i).sum();
        if (row - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!("row {i} sums to {row}, not 1")));
        }
        for j in 0..n {
            let expect_nonzero = i == j || g.has_edge(i, j);
            if expect_nonzero != (w[(i, j)] > 0.0) {
                return Err(Error::Invariant(format!(
                    "sparsity mismatch at ({i},{j}): w={}",
                    w[(i, j)]
                )));
            }
        }
    }
    let eigenvalues = symmetric_eigenvalues(&w)?;
    let beta = beta_from_spectrum(&eigenvalues)?;
    Ok(ConsensusMatrix { w, eigenvalues, beta })
}

fn symmetric_eigenvalues(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = w.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (w[(i, j)] - w[(j, i)]).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut eig: Vec<f64> = w.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eig)
}

fn beta_from_spectrum(eig: &[f64]) -> Result<f64> {
    let n = eig.len();
    let lambda_1 = eig[n - 1];
    if (lambda_1 - 1.0).abs() > 1e-9 {
        return Err(Error::Invariant(format!("largest eigenvalue is {lambda_1}, not 1")));
    }
    let lambda_2 = if n >= 2 { eig[n - 2] } else { 0.0 };
    let lambda_n = eig[0];
    let beta = lambda_2.abs().max(lambda_n.abs());
    if beta >= 1.0 {
        return Err(Error::Invariant(format!("beta = {beta} >= 1: graph not mixing")));
    }
    Ok(beta)
}

/// β = max{|λ_2|, |λ_n|} recomputed from the entries; checks symmetry.
pub fn spectral_beta(w: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(w)?;
    beta_from_spectrum(&eig)
}
