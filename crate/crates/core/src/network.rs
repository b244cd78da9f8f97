//! Communication graphs and their mixing matrices.
//!
//! Every topology is turned into a symmetric doubly-stochastic matrix with
//! Metropolis–Hastings weights `w_ij = 1/(1 + max(d_i, d_j))`. Mixing a
//! per-agent quantity `t` times applies `W` repeatedly, which is what a real
//! network does with `t` rounds of neighbour exchange.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_RESAMPLES: usize = 1000;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    Ring,
    Complete,
    Star,
    /// `G(N, p)`, resampled until connected.
    ErdosRenyi { p: f64, seed: u64 },
    /// Zero-based undirected edge list.
    Explicit(Vec<(usize, usize)>),
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ring => write!(f, "ring"),
            Topology::Complete => write!(f, "complete"),
            Topology::Star => write!(f, "star"),
            Topology::ErdosRenyi { p, seed } => write!(f, "erdos_renyi:{p}:{seed}"),
            Topology::Explicit(edges) => {
                write!(f, "explicit:")?;
                let parts: Vec<String> = edges.iter().map(|(i, j)| format!("{i}-{j}")).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    /// `ring`, `complete`, `star`, `erdos_renyi:<p>:<seed>`, or
    /// `explicit:0-1,1-2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("ring", None) => Ok(Topology::Ring),
            ("complete", None) => Ok(Topology::Complete),
            ("star", None) => Ok(Topology::Star),
            ("erdos_renyi", Some(rest)) => {
                let (p, seed) = rest.split_once(':').unwrap_or((rest, "0"));
                let p = p
                    .parse()
                    .map_err(|_| Error::Topology(format!("bad edge probability `{p}`")))?;
                let seed = seed
                    .parse()
                    .map_err(|_| Error::Topology(format!("bad seed `{seed}`")))?;
                Ok(Topology::ErdosRenyi { p, seed })
            }
            ("explicit", Some(rest)) => {
                let mut edges = Vec::new();
                for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
                    let (a, b) = pair
                        .split_once('-')
                        .ok_or_else(|| Error::Topology(format!("bad edge `{pair}`")))?;
                    let parse = |v: &str| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Topology(format!("bad node index `{v}`")))
                    };
                    edges.push((parse(a)?, parse(b)?));
                }
                Ok(Topology::Explicit(edges))
            }
            _ => Err(Error::Topology(format!("unknown topology `{s}`"))),
        }
    }
}

/// Parses an edge file: one `i j` pair per line (zero-based), `#` comments.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',' || c == '-')
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: Vec<usize> = fields
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Topology(format!("line {}: expected `i j`", lineno + 1)))?;
        if parsed.len() != 2 {
            return Err(Error::Topology(format!(
                "line {}: expected two node indices",
                lineno + 1
            )));
        }
        edges.push((parsed[0], parsed[1]));
    }
    Ok(edges)
}

/// An undirected connected graph with its mixing matrix.
#[derive(Clone, Debug)]
pub struct NetworkSpec<T: Real> {
    n_agents: usize,
    /// Sorted, deduplicated, `i < j`.
    edges: Vec<(usize, usize)>,
    mixing: DMatrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDiagnostics<T> {
    /// `‖W − 11ᵀ/N‖₂`, the second largest singular value of `W`.
    pub sigma2: T,
    /// `1 − λ_min(Wᵗ)` for the requested `t`.
    pub l_t: T,
    /// Smallest `t` with `σ₂ᵗ ≤ 1/(2√N)`.
    pub t_min: u32,
    pub t: u32,
}

impl<T> SpectralDiagnostics<T> {
    pub fn meets_bound(&self) -> bool {
        self.t >= self.t_min
    }
}

pub fn build_topology<T: Real>(kind: &Topology, n_agents: usize) -> Result<NetworkSpec<T>> {
    if n_agents < 2 {
        return Err(Error::Topology(format!(
            "a network needs at least 2 agents, got {n_agents}"
        )));
    }
    let edges: Vec<(usize, usize)> = match kind {
        Topology::Ring => (0..n_agents).map(|i| (i, (i + 1) % n_agents)).collect(),
        Topology::Complete => (0..n_agents)
            .flat_map(|i| (i + 1..n_agents).map(move |j| (i, j)))
            .collect(),
        Topology::Star => (1..n_agents).map(|j| (0, j)).collect(),
        Topology::ErdosRenyi { p, seed } => {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Topology(format!(
                    "edge probability {p} must lie in (0, 1]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut found = None;
            for _ in 0..MAX_RESAMPLES {
                let candidate: Vec<(usize, usize)> = (0..n_agents)
                    .flat_map(|i| (i + 1..n_agents).map(move |j| (i, j)))
                    .filter(|_| rng.random::<f64>() < *p)
                    .collect();
                if is_connected(n_agents, &candidate) {
                    found = Some(candidate);
                    break;
                }
            }
            found.ok_or_else(|| {
                Error::Topology(format!(
                    "no connected G({n_agents}, {p}) sample in {MAX_RESAMPLES} attempts"
                ))
            })?
        }
        Topology::Explicit(edges) => edges.clone(),
    };
    NetworkSpec::metropolis(n_agents, &edges)
}

impl<T: Real> NetworkSpec<T> {
    /// Builds Metropolis–Hastings weights for an undirected edge list.
    pub fn metropolis(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let edges = normalize_edges(n_agents, edges)?;
        if !is_connected(n_agents, &edges) {
            return Err(Error::Topology("graph is not connected".into()));
        }
        let mut degree = vec![0usize; n_agents];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut w = DMatrix::<T>::zeros(n_agents, n_agents);
        for &(i, j) in &edges {
            let wij = T::one() / T::from_usize(1 + degree[i].max(degree[j])).unwrap();
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
        for i in 0..n_agents {
            let off: T = (0..n_agents)
                .filter(|&j| j != i)
                .fold(T::zero(), |acc, j| acc + w[(i, j)]);
            w[(i, i)] = T::one() - off;
        }
        Self::new(n_agents, &edges, w)
    }

    /// Validates a user-supplied mixing matrix against the edge set.
    pub fn new(n_agents: usize, edges: &[(usize, usize)], mixing: DMatrix<T>) -> Result<Self> {
        let edges = normalize_edges(n_agents, edges)?;
        if mixing.shape() != (n_agents, n_agents) {
            return Err(Error::Dimension(format!(
                "mixing matrix must be {n_agents}x{n_agents}, got {:?}",
                mixing.shape()
            )));
        }
        if !is_connected(n_agents, &edges) {
            return Err(Error::Topology("graph is not connected".into()));
        }
        let tol = T::lit(STOCHASTIC_TOL);
        let edge_set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
        for i in 0..n_agents {
            let row_sum = mixing.row(i).sum();
            if (row_sum - T::one()).abs() > tol {
                return Err(Error::Topology(format!("row {i} of W sums to {row_sum}")));
            }
            for j in 0..n_agents {
                let wij = mixing[(i, j)];
                if (wij - mixing[(j, i)]).abs() > tol {
                    return Err(Error::Topology(format!("W is not symmetric at ({i}, {j})")));
                }
                if wij < T::zero() {
                    return Err(Error::Topology(format!("W has a negative entry at ({i}, {j})")));
                }
                let linked = i == j || edge_set.contains(&(i.min(j), i.max(j)));
                if linked != (wij > T::zero()) {
                    return Err(Error::Topology(format!(
                        "W sparsity does not match the graph at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            n_agents,
            edges,
            mixing,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn mixing(&self) -> &DMatrix<T> {
        &self.mixing
    }

    /// Dense `Wᵗ`.
    pub fn mixing_power(&self, t: u32) -> DMatrix<T> {
        let mut p = DMatrix::<T>::identity(self.n_agents, self.n_agents);
        for _ in 0..t {
            p = &p * &self.mixing;
        }
        p
    }

    pub fn spectral_diagnostics(&self, t: u32) -> SpectralDiagnostics<T> {
        let n = T::from_usize(self.n_agents).unwrap();
        let centered = self.mixing.map(|w| w - T::one() / n);
        let eig = SymmetricEigen::new(centered);
        let sigma2 = eig.eigenvalues.iter().fold(T::zero(), |acc, l| {
            let a = l.abs();
            if a > acc {
                a
            } else {
                acc
            }
        });
        let power = SymmetricEigen::new(self.mixing_power(t.max(1)));
        let l_t = T::one() - power.eigenvalues.min();
        SpectralDiagnostics {
            sigma2,
            l_t,
            t_min: min_mixing_steps(sigma2.as_f64(), self.n_agents),
            t,
        }
    }

    /// Returns `Σ_j (Wᵗ)_ij V_j` for every agent `i`, by `t` successive
    /// applications of `W`.
    pub fn mix(&self, t: u32, values: &[DMatrix<T>]) -> Result<Vec<DMatrix<T>>> {
        if values.len() != self.n_agents {
            return Err(Error::Dimension(format!(
                "mix expects {} agent values, got {}",
                self.n_agents,
                values.len()
            )));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|v| v.shape() != first.shape()) {
                return Err(Error::Dimension("mixed values differ in shape".into()));
            }
        }
        let mut current = values.to_vec();
        for _ in 0..t {
            current = self.apply_once(&current);
        }
        Ok(current)
    }

    fn apply_once(&self, values: &[DMatrix<T>]) -> Vec<DMatrix<T>> {
        (0..self.n_agents)
            .map(|i| {
                let mut acc = DMatrix::<T>::zeros(values[0].nrows(), values[0].ncols());
                for (j, v) in values.iter().enumerate() {
                    let w = self.mixing[(i, j)];
                    if w != T::zero() {
                        acc += v * w;
                    }
                }
                acc
            })
            .collect()
    }
}

/// `⌈log_{σ₂}(1/(2√N))⌉`, or 1 when `σ₂ = 0`.
pub fn min_mixing_steps(sigma2: f64, n_agents: usize) -> u32 {
    if sigma2 <= 0.0 {
        return 1;
    }
    let target = 1.0 / (2.0 * (n_agents as f64).sqrt());
    if sigma2 <= target {
        return 1;
    }
    let steps = (target.ln() / sigma2.ln()).ceil();
    steps.max(1.0) as u32
}

fn normalize_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut set = BTreeSet::new();
    for &(i, j) in edges {
        if i >= n_agents || j >= n_agents {
            return Err(Error::Topology(format!(
                "edge ({i}, {j}) references a node outside 0..{n_agents}"
            )));
        }
        if i == j {
            return Err(Error::Topology(format!("self loop at node {i}")));
        }
        set.insert((i.min(j), i.max(j)));
    }
    Ok(set.into_iter().collect())
}

fn is_connected(n_agents: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n_agents];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n_agents];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
