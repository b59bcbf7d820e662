//! Polarity initialisation and refinement, signed edge-weight assignment and
//! balance checking.
//!
//! A signed graph is balanced iff its nodes admit polarities `beta_i` with
//! `beta_i * beta_j = sign(w_ij)` on every edge. [`assign_weights`] with
//! [`WeightScheme::BalancedCht`] produces such graphs by construction; the
//! other schemes exist for ablations.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PolarityVector, SignedGraph};

/// Symmetric matrix of nonnegative pairwise feature distances.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistanceField(Array2<f64>);

impl FeatureDistanceField {
    pub fn new(d: Array2<f64>) -> Result<Self> {
        let (r, c) = d.dim();
        if r != c {
            return Err(Error::DimensionMismatch { expected: r, actual: c });
        }
        for i in 0..r {
            if d[[i, i]] != 0.0 {
                return Err(Error::InvalidGraph(format!("distance d[{i},{i}] must be zero")));
            }
            for j in (i + 1)..r {
                let (a, b) = (d[[i, j]], d[[j, i]]);
                if a.is_nan() && b.is_nan() {
                    continue;
                }
                if a != b || !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "distance ({i}, {j}) must be finite, nonnegative and symmetric"
                    )));
                }
            }
        }
        Ok(FeatureDistanceField(d))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightScheme {
    /// `exp(-d)` between same-polarity nodes, `exp(-d) - 1` otherwise.
    BalancedCht,
    /// `exp(-d)` on every edge.
    PositiveOnly,
    /// Shifted logistic `1 - 2 / (1 + exp(-(d - d_star)))`, ignoring polarity.
    LogisticUnbalanced { d_star: f64 },
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        if let WeightScheme::LogisticUnbalanced { d_star } = *self {
            if !(d_star.is_finite() && d_star > 0.0) {
                return Err(Error::InvalidConfig(format!("d_star must be finite and positive, got {d_star}")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, d: f64, same_polarity: bool) -> f64 {
        match *self {
            WeightScheme::BalancedCht => {
                if same_polarity {
                    (-d).exp()
                } else {
                    // exp(-d) - 1 without cancellation for small d
                    (-d).exp_m1()
                }
            }
            WeightScheme::PositiveOnly => (-d).exp(),
            WeightScheme::LogisticUnbalanced { d_star } => {
                // 1 - 2 sigma(d - d*) == -tanh((d - d*) / 2)
                -((d - d_star) / 2.0).tanh()
            }
        }
    }
}

fn sign(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

/// Node with the largest absolute covariance row sum.
pub fn default_anchor(cov: ArrayView2<f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, row) in cov.rows().into_iter().enumerate() {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// `beta_anchor = +1` and `beta_j = sign(cov[anchor, j])`, with `sign(0) = +1`.
pub fn init_polarity(cov: ArrayView2<f64>, anchor: usize) -> Result<PolarityVector> {
    let (r, c) = cov.dim();
    if r != c {
        return Err(Error::DimensionMismatch { expected: r, actual: c });
    }
    if anchor >= r {
        return Err(Error::InvalidGraph(format!("anchor {anchor} out of range for {r} nodes")));
    }
    let beta = (0..r)
        .map(|j| if j == anchor { 1 } else { sign(cov[[anchor, j]]) })
        .collect();
    PolarityVector::new(beta)
}

/// Polarities propagated along a maximum spanning tree of `topology`,
/// where an edge's strength is its absolute correlation: the child takes
/// the parent's polarity times the sign of their covariance. Each
/// connected component starts with `+1` at its anchor (the given anchor,
/// or the lowest-indexed node for components not containing it).
pub fn tree_polarity(topology: &SignedGraph, cov: ArrayView2<f64>, anchor: usize) -> Result<PolarityVector> {
    let n = topology.n_nodes();
    if cov.dim() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, actual: cov.nrows() });
    }
    if anchor >= n {
        return Err(Error::InvalidGraph(format!("anchor {anchor} out of range for {n} nodes")));
    }
    let corr = |i: usize, j: usize| {
        let s = (cov[[i, i]] * cov[[j, j]]).sqrt();
        if s > 0.0 {
            cov[[i, j]] / s
        } else {
            0.0
        }
    };
    let nbrs = topology.neighbors();
    let mut beta = vec![0i8; n];
    let mut heap = std::collections::BinaryHeap::new();
    let roots = std::iter::once(anchor).chain(0..n);
    for root in roots {
        if beta[root] != 0 {
            continue;
        }
        beta[root] = 1;
        let push = |heap: &mut std::collections::BinaryHeap<(OrdF64, std::cmp::Reverse<usize>, usize)>, i: usize| {
            for &(j, _) in &nbrs[i] {
                heap.push((OrdF64(corr(i, j).abs()), std::cmp::Reverse(j), i));
            }
        };
        push(&mut heap, root);
        while let Some((_, std::cmp::Reverse(j), i)) = heap.pop() {
            if beta[j] != 0 {
                continue;
            }
            beta[j] = beta[i] * sign(cov[[i, j]]);
            push(&mut heap, j);
        }
    }
    PolarityVector::new(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Empirical covariance between the rows of each sample, averaged over
/// samples. Every sample is a node-by-time matrix.
pub fn node_covariance<'a>(samples: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Option<Array2<f64>> {
    let mut acc: Option<Array2<f64>> = None;
    let mut count = 0usize;
    for x in samples {
        let t = x.ncols();
        if t == 0 {
            continue;
        }
        let means = x.sum_axis(ndarray::Axis(1)) / t as f64;
        let centred = &x - &means.insert_axis(ndarray::Axis(1));
        let c = centred.dot(&centred.t()) / t as f64;
        match acc.as_mut() {
            Some(a) => *a += &c,
            None => acc = Some(c),
        }
        count += 1;
    }
    acc.map(|a| a / count as f64)
}

/// Weights the edges of `topology` from the distances. Edges whose weight
/// comes out exactly zero are dropped from the result.
pub fn assign_weights(
    d: &FeatureDistanceField,
    beta: &PolarityVector,
    scheme: WeightScheme,
    topology: &SignedGraph,
) -> Result<SignedGraph> {
    let n = topology.n_nodes();
    if d.n() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: d.n() });
    }
    if beta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: beta.len() });
    }
    scheme.validate()?;
    if let Some(e) = topology.edges().iter().find(|e| d.get(e.i, e.j).is_nan()) {
        return Err(Error::MissingDistance(e.i, e.j));
    }
    let b = beta.as_slice();
    topology.map_weights(|e| scheme.weight(d.get(e.i, e.j), b[e.i] == b[e.j]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum BalanceCheck {
    /// Polarities satisfying the balance condition on every edge.
    Balanced(PolarityVector),
    /// Closed walk `v0, v1, ..., vk = v0` with an odd number of negative edges.
    Unbalanced { cycle: Vec<usize> },
}

impl BalanceCheck {
    pub fn is_balanced(&self) -> bool {
        matches!(self, BalanceCheck::Balanced(_))
    }
}

/// Two-colours each connected component by breadth-first search over the
/// edge signs.
pub fn is_balanced(g: &SignedGraph) -> BalanceCheck {
    let n = g.n_nodes();
    let adj = g.neighbors();
    let mut color = vec![0i8; n];
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        color[root] = 1;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, w) in &adj[u] {
                let want = color[u] * sign(w);
                if color[v] == 0 {
                    color[v] = want;
                    parent[v] = u;
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                } else if color[v] != want {
                    return BalanceCheck::Unbalanced {
                        cycle: tree_cycle(u, v, &parent, &depth),
                    };
                }
            }
        }
    }
    BalanceCheck::Balanced(PolarityVector::new(color).expect("colours are +-1"))
}

fn tree_cycle(u: usize, v: usize, parent: &[usize], depth: &[usize]) -> Vec<usize> {
    let (mut a, mut b) = (u, v);
    let mut left = vec![a];
    let mut right = vec![b];
    while depth[a] > depth[b] {
        a = parent[a];
        left.push(a);
    }
    while depth[b] > depth[a] {
        b = parent[b];
        right.push(b);
    }
    while a != b {
        a = parent[a];
        b = parent[b];
        left.push(a);
        right.push(b);
    }
    // left: u .. lca, right: v .. lca
    right.pop();
    let mut cycle = left;
    cycle.extend(right.into_iter().rev());
    cycle.push(u);
    cycle
}

#[derive(Debug, Clone)]
pub struct PolarityUpdate {
    pub beta: PolarityVector,
    /// Input graph with edge signs set to `beta_i * beta_j`.
    pub graph: SignedGraph,
    pub sweeps: usize,
    pub converged: bool,
}

/// Total regulariser `sum_q x_q^T L^B(beta) x_q`, where `L^B` has the
/// weight magnitudes of `g`, edge signs `beta_i * beta_j` and absolute
/// degrees on the diagonal, so each edge contributes
/// `|w_ij| (x_i - beta_i beta_j x_j)^2`.
pub fn polarity_objective(g: &SignedGraph, beta: &PolarityVector, signals: &[ArrayView2<f64>]) -> f64 {
    let b = beta.as_slice();
    g.edges()
        .iter()
        .map(|e| {
            let s = f64::from(b[e.i] * b[e.j]);
            let sq: f64 = signals
                .iter()
                .map(|x| {
                    x.row(e.i)
                        .iter()
                        .zip(x.row(e.j).iter())
                        .map(|(a, c)| (a - s * c) * (a - s * c))
                        .sum::<f64>()
                })
                .sum();
            e.w.abs() * sq
        })
        .sum()
}

fn row_inner(x: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| a * b).sum()
}

/// Greedy polarity refinement: for each node in index order, keep the sign
/// that gives the smaller total regulariser over `signals` (every column of
/// every matrix is one training signal). Ties keep the current sign. Stops
/// after a sweep without changes or after `max_sweeps` sweeps.
pub fn update_polarities(
    g: &SignedGraph,
    beta: &PolarityVector,
    signals: &[ArrayView2<f64>],
    max_sweeps: usize,
) -> Result<PolarityUpdate> {
    let instances: Vec<(&SignedGraph, ArrayView2<f64>)> = signals.iter().map(|x| (g, x.view())).collect();
    let (beta, sweeps, converged) = update_polarities_multi(&instances, g.n_nodes(), beta, max_sweeps)?;
    let b = beta.as_slice();
    let graph = g.map_weights(|e| f64::from(b[e.i] * b[e.j]) * e.w.abs())?;
    Ok(PolarityUpdate {
        beta,
        graph,
        sweeps,
        converged,
    })
}

/// Variant of [`update_polarities`] where every signal carries its own
/// graph (weight magnitudes differ per sample, signs follow `beta`).
pub fn update_polarities_multi(
    instances: &[(&SignedGraph, ArrayView2<f64>)],
    n_nodes: usize,
    beta: &PolarityVector,
    max_sweeps: usize,
) -> Result<(PolarityVector, usize, bool)> {
    if beta.len() != n_nodes {
        return Err(Error::DimensionMismatch { expected: n_nodes, actual: beta.len() });
    }
    // The objective is const - 2 sum_ij beta_i beta_j c_ij with
    // c_ij = sum over instances of |w_ij| <x_i, x_j>.
    let mut coupling: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (g, x) in instances {
        if g.n_nodes() != n_nodes {
            return Err(Error::DimensionMismatch { expected: n_nodes, actual: g.n_nodes() });
        }
        if x.nrows() != n_nodes {
            return Err(Error::DimensionMismatch { expected: n_nodes, actual: x.nrows() });
        }
        for e in g.edges() {
            *coupling.entry((e.i, e.j)).or_insert(0.0) += e.w.abs() * row_inner(x, e.i, e.j);
        }
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
    for (&(i, j), &c) in &coupling {
        adj[i].push((j, c));
        adj[j].push((i, c));
    }
    let mut beta = beta.clone();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for i in 0..n_nodes {
            let local: f64 = adj[i].iter().map(|&(j, c)| beta.get(j) * c).sum::<f64>() * beta.get(i);
            if local < 0.0 {
                beta.flip(i);
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok((beta, sweeps, converged))
}
