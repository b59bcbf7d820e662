//! Signed graphs, their Laplacians and node polarities.
//!
//! A [`SignedGraph`] stores an undirected edge list with real nonzero
//! weights and optional per-node self-loops. Laplacians are dense
//! (see [`Laplacian`]); the graphs handled here have at most a few thousand
//! nodes.

mod laplacian;
mod polarity;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use laplacian::{
    build_laplacian, gct_shift, glr, glr_matrix, normalize_weights, similarity_transform,
    CsrMatrix, Laplacian, LaplacianKind,
};
pub use polarity::PolarityVector;

/// Undirected weighted edge, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct SignedGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    self_loops: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    self_loops: Vec<f64>,
}

impl TryFrom<RawGraph> for SignedGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        let g = SignedGraph::new(raw.n_nodes, raw.edges)?;
        if raw.self_loops.is_empty() {
            Ok(g)
        } else {
            g.with_self_loops(raw.self_loops)
        }
    }
}

impl From<SignedGraph> for RawGraph {
    fn from(g: SignedGraph) -> Self {
        let self_loops = if g.self_loops.iter().all(|&s| s == 0.0) {
            Vec::new()
        } else {
            g.self_loops
        };
        RawGraph {
            n_nodes: g.n_nodes,
            edges: g.edges.iter().map(|e| (e.i, e.j, e.w)).collect(),
            self_loops,
        }
    }
}

impl SignedGraph {
    /// Builds a graph from `(i, j, w)` triples. Endpoints are reordered so
    /// that `i < j`; self-edges, duplicates, zero and non-finite weights are
    /// rejected.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut out: Vec<Edge> = Vec::new();
        for (a, b, w) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) is a self-edge; use self-loops instead"
                )));
            }
            if !w.is_finite() || w == 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) has invalid weight {w}"
                )));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            out.push(Edge { i, j, w });
        }
        let mut keys: Vec<(usize, usize)> = out.iter().map(|e| (e.i, e.j)).collect();
        keys.sort_unstable();
        if let Some(dup) = keys.windows(2).find(|p| p[0] == p[1]) {
            return Err(Error::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                dup[0].0, dup[0].1
            )));
        }
        Ok(SignedGraph {
            n_nodes,
            edges: out,
            self_loops: vec![0.0; n_nodes],
        })
    }

    pub fn with_self_loops(mut self, loops: Vec<f64>) -> Result<Self> {
        if loops.len() != self.n_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes,
                actual: loops.len(),
            });
        }
        if let Some(bad) = loops.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidGraph(format!("non-finite self-loop weight {bad}")));
        }
        self.self_loops = loops;
        Ok(self)
    }

    /// Same graph with every self-loop set to `delta`.
    pub fn with_uniform_self_loop(self, delta: f64) -> Result<Self> {
        let n = self.n_nodes;
        self.with_self_loops(vec![delta; n])
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn self_loops(&self) -> &[f64] {
        &self.self_loops
    }

    /// Same topology with every weight replaced by `f(edge)`. Edges mapped
    /// to exactly zero are dropped.
    pub fn map_weights(&self, mut f: impl FnMut(&Edge) -> f64) -> Result<Self> {
        let edges: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|e| (e.i, e.j, f(e)))
            .filter(|&(_, _, w)| w != 0.0)
            .collect();
        SignedGraph::new(self.n_nodes, edges)?.with_self_loops(self.self_loops.clone())
    }

    /// Copy of the graph with all weights replaced by their absolute values.
    pub fn abs(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.w = e.w.abs();
        }
        g
    }

    pub fn with_unit_weights(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.w = 1.0;
        }
        g
    }

    /// Dense symmetric adjacency matrix with self-loops on the diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.n_nodes;
        let mut w = Array2::zeros((n, n));
        for e in &self.edges {
            w[[e.i, e.j]] = e.w;
            w[[e.j, e.i]] = e.w;
        }
        for (i, &s) in self.self_loops.iter().enumerate() {
            w[[i, i]] = s;
        }
        w
    }

    /// Neighbour lists `(neighbour, weight)` per node.
    pub fn neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            adj[e.i].push((e.j, e.w));
            adj[e.j].push((e.i, e.w));
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for e in &self.edges {
            deg[e.i] += 1;
            deg[e.j] += 1;
        }
        deg
    }

    /// Number of connected components (self-loops ignored).
    pub fn n_components(&self) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; self.n_nodes];
        let mut count = 0;
        for s in 0..self.n_nodes {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// Line-oriented text form: a `nodes N` header, one `i j w` line per
    /// edge and `selfloop i w` for nonzero self-loops. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {}", self.n_nodes).unwrap();
        for e in &self.edges {
            writeln!(s, "{} {} {}", e.i, e.j, e.w).unwrap();
        }
        for (i, &w) in self.self_loops.iter().enumerate() {
            if w != 0.0 {
                writeln!(s, "selfloop {i} {w}").unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse_named(text, "<graph>")
    }

    fn parse_named(text: &str, name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut n_nodes: Option<usize> = None;
        let mut edges = Vec::new();
        let mut loops = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["nodes", n] => {
                    if n_nodes.is_some() {
                        return Err(err(line_no, "repeated `nodes` header".into()));
                    }
                    n_nodes = Some(n.parse().map_err(|e| err(line_no, format!("{e}")))?);
                }
                ["selfloop", i, w] => {
                    let i: usize = i.parse().map_err(|e| err(line_no, format!("{e}")))?;
                    let w: f64 = w.parse().map_err(|e| err(line_no, format!("{e}")))?;
                    loops.push((i, w));
                }
                [i, j, w] => {
                    let i: usize = i.parse().map_err(|e| err(line_no, format!("{e}")))?;
                    let j: usize = j.parse().map_err(|e| err(line_no, format!("{e}")))?;
                    let w: f64 = w.parse().map_err(|e| err(line_no, format!("{e}")))?;
                    edges.push((i, j, w));
                }
                _ => return Err(err(line_no, format!("unrecognised line `{line}`"))),
            }
        }
        let n = n_nodes.ok_or_else(|| err(0, "missing `nodes N` header".into()))?;
        let g = SignedGraph::new(n, edges)?;
        let mut sl = vec![0.0; n];
        for (i, w) in loops {
            if i >= n {
                return Err(Error::InvalidGraph(format!("self-loop node {i} out of range")));
            }
            sl[i] = w;
        }
        g.with_self_loops(sl)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
