use crate::error::{Error, Result};
use crate::graph::SignedGraph;

/// Line graph: one node per edge of `g0` (in edge order), two nodes
/// adjacent iff their edges share an endpoint. All weights are 1.
pub fn build_line_graph(g0: &SignedGraph) -> Result<SignedGraph> {
    let m = g0.n_edges();
    if m == 0 {
        return Err(Error::InvalidGraph("line graph needs at least one edge".into()));
    }
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); g0.n_nodes()];
    for (k, e) in g0.edges().iter().enumerate() {
        incident[e.i].push(k);
        incident[e.j].push(k);
    }
    let mut pairs = std::collections::BTreeSet::new();
    for edges in &incident {
        for (a, &k) in edges.iter().enumerate() {
            for &l in &edges[a + 1..] {
                pairs.insert((k.min(l), k.max(l)));
            }
        }
    }
    SignedGraph::new(m, pairs.into_iter().map(|(k, l)| (k, l, 1.0)))
}

/// `h` stacked copies of `spatial`; node `i` of layer `t` gets index
/// `t * N + i` and is tied to the same node of layer `t + 1` by a positive
/// edge of weight `temporal_w`.
pub fn build_product_graph(spatial: &SignedGraph, h: usize, temporal_w: f64) -> Result<SignedGraph> {
    if h == 0 {
        return Err(Error::InvalidGraph("product graph needs at least one layer".into()));
    }
    if !(temporal_w.is_finite() && temporal_w > 0.0) {
        return Err(Error::InvalidGraph(format!("temporal weight must be positive, got {temporal_w}")));
    }
    let n = spatial.n_nodes();
    let mut edges = Vec::with_capacity(spatial.n_edges() * h + n * (h - 1));
    for t in 0..h {
        for e in spatial.edges() {
            edges.push((t * n + e.i, t * n + e.j, e.w));
        }
        if t + 1 < h {
            for i in 0..n {
                edges.push((t * n + i, (t + 1) * n + i, temporal_w));
            }
        }
    }
    let g = SignedGraph::new(n * h, edges)?;
    let loops: Vec<f64> = (0..h).flat_map(|_| spatial.self_loops().iter().copied()).collect();
    if loops.iter().any(|v| *v != 0.0) {
        g.with_self_loops(loops)
    } else {
        Ok(g)
    }
}
