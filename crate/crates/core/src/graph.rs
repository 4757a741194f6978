//! Time-varying directed graphs and their column-stochastic mixing matrices.
//!
//! Every node is its own in- and out-neighbor, and the out-degree `d_j(t)`
//! counts that self-loop. The mixing matrix built from `G(t)` has
//! `A_ij = 1/d_j(t)` whenever `j` is an in-neighbor of `i`.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::rng::{substream, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge ({src}, {dst}) references a node outside 0..{n}")]
    NodeOutOfRange { src: usize, dst: usize, n: usize },
    #[error("node {node} has out-degree 0")]
    ZeroOutDegree { node: usize },
    #[error("node {node} is missing its self-loop")]
    MissingSelfLoop { node: usize },
    #[error("star hubs must differ (both are {hub})")]
    IdenticalHubs { hub: usize },
    #[error("graph sequence members disagree on node count ({expected} vs {got})")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("window length B must be positive and not exceed the horizon (B = {b}, horizon = {horizon})")]
    InvalidWindow { b: usize, horizon: usize },
    #[error("union graph of window {window} is not strongly connected")]
    WindowNotConnected { window: usize },
    #[error("edge list line {line}: {reason}")]
    EdgeListParse { line: usize, reason: String },
    #[error("singular value computation did not converge")]
    SvdNonConvergence,
    #[error("worst-case constants underflow double precision (n = {n}, B = {b})")]
    ConstantsUnderflow { n: usize, b: usize },
}

/// A directed graph on nodes `0..n` stored as compressed adjacency lists.
#[derive(Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    out_ptr: Vec<usize>,
    out_idx: Vec<usize>,
    in_ptr: Vec<usize>,
    in_idx: Vec<usize>,
}

impl fmt::Debug for DirectedGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_map();
        for i in 0..self.n {
            list.entry(&i, &self.out_neighbors(i));
        }
        list.finish()
    }
}

fn compress(n: usize, lists: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut ptr = Vec::with_capacity(n + 1);
    let mut idx = Vec::with_capacity(lists.iter().map(Vec::len).sum());
    ptr.push(0);
    for list in lists {
        idx.extend_from_slice(list);
        ptr.push(idx.len());
    }
    (ptr, idx)
}

impl DirectedGraph {
    /// Builds a graph from an edge list, adding every self-loop.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(GraphError::TooFewNodes { min: 1, got: 0 });
        }
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (src, dst) in edges {
            if src >= n || dst >= n {
                return Err(GraphError::NodeOutOfRange { src, dst, n });
            }
            out[src].push(dst);
        }
        Self::from_out_neighbors_raw(out)
    }

    /// Builds a graph from per-node out-neighbor lists exactly as given.
    ///
    /// No self-loops are inserted, so the result may violate the self-loop
    /// invariant; [`DirectedGraph::validate`] reports that.
    pub fn from_out_neighbors_raw(mut out: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let n = out.len();
        if n == 0 {
            return Err(GraphError::TooFewNodes { min: 1, got: 0 });
        }
        let mut inn: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (src, list) in out.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &dst in list.iter() {
                if dst >= n {
                    return Err(GraphError::NodeOutOfRange { src, dst, n });
                }
                inn[dst].push(src);
            }
        }
        let (out_ptr, out_idx) = compress(n, &out);
        let (in_ptr, in_idx) = compress(n, &inn);
        Ok(Self {
            n,
            out_ptr,
            out_idx,
            in_ptr,
            in_idx,
        })
    }

    /// Directed ring `i -> i+1 mod n` plus self-loops.
    pub fn directed_cycle(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
    }

    /// Undirected star centred at `hub`: edges in both directions plus self-loops.
    pub fn star(n: usize, hub: usize) -> Result<Self, GraphError> {
        if hub >= n {
            return Err(GraphError::NodeOutOfRange {
                src: hub,
                dst: hub,
                n,
            });
        }
        Self::from_edges(
            n,
            (0..n)
                .filter(|&leaf| leaf != hub)
                .flat_map(|leaf| [(hub, leaf), (leaf, hub)]),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_idx[self.out_ptr[i]..self.out_ptr[i + 1]]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_idx[self.in_ptr[i]..self.in_ptr[i + 1]]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_ptr[i + 1] - self.out_ptr[i]
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_ptr[i + 1] - self.in_ptr[i]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.out_neighbors(src).binary_search(&dst).is_ok()
    }

    /// All edges `(src, dst)` in lexicographic order, self-loops included.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.out_neighbors(i).iter().map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_idx.len()
    }

    /// Checks the self-loop and positive out-degree invariants.
    pub fn validate(&self) -> Result<(), GraphError> {
        for i in 0..self.n {
            if self.out_degree(i) == 0 {
                return Err(GraphError::ZeroOutDegree { node: i });
            }
            if !self.has_edge(i, i) {
                return Err(GraphError::MissingSelfLoop { node: i });
            }
        }
        Ok(())
    }

    /// Returns the common degree if every in- and out-degree (self-loops
    /// counted) equals one number.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.out_degree(0);
        (0..self.n)
            .all(|i| self.out_degree(i) == d && self.in_degree(i) == d)
            .then_some(d)
    }

    /// Graph whose edge set is the union of the given graphs' edge sets.
    pub fn union<'a, I>(graphs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = &'a DirectedGraph>,
    {
        let mut iter = graphs.into_iter();
        let first = iter
            .next()
            .ok_or(GraphError::TooFewNodes { min: 1, got: 0 })?;
        let n = first.n;
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| first.out_neighbors(i).to_vec()).collect();
        for g in iter {
            if g.n != n {
                return Err(GraphError::NodeCountMismatch {
                    expected: n,
                    got: g.n,
                });
            }
            for (i, list) in out.iter_mut().enumerate() {
                list.extend_from_slice(g.out_neighbors(i));
            }
        }
        Self::from_out_neighbors_raw(out)
    }
}

fn reaches_all<'a>(n: usize, neighbors: impl Fn(usize) -> &'a [usize]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// True iff every node reaches every other node along directed paths.
///
/// Forward and backward BFS from node 0 both have to cover the graph.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    reaches_all(g.n, |u| g.out_neighbors(u)) && reaches_all(g.n, |u| g.in_neighbors(u))
}

/// Column-stochastic matrix `A(t)` with `A_ij = 1/d_j` for `j` in `N_i^in`.
///
/// Stored sparsely, row by row, aligned with the source graph's in-lists.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    graph: Arc<DirectedGraph>,
    weights: Vec<f64>,
    // out-degree of each in-neighbour, aligned with `weights`
    divisors: Vec<f64>,
}

pub fn build_mixing_matrix(g: impl Into<Arc<DirectedGraph>>) -> Result<MixingMatrix, GraphError> {
    let graph = g.into();
    if let Some(node) = (0..graph.n).find(|&j| graph.out_degree(j) == 0) {
        return Err(GraphError::ZeroOutDegree { node });
    }
    let divisors: Vec<f64> = graph
        .in_idx
        .iter()
        .map(|&j| graph.out_degree(j) as f64)
        .collect();
    let weights = divisors.iter().map(|d| 1.0 / d).collect();
    Ok(MixingMatrix {
        graph,
        weights,
        divisors,
    })
}

impl MixingMatrix {
    pub fn n(&self) -> usize {
        self.graph.n
    }

    pub fn source_graph(&self) -> &Arc<DirectedGraph> {
        &self.graph
    }

    /// Nonzero entries of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.graph.in_ptr[i]..self.graph.in_ptr[i + 1];
        self.graph.in_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .find(|&(col, _)| col == j)
            .map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                dense[(i, j)] = v;
            }
        }
        dense
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n()];
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                sums[j] += v;
            }
        }
        sums
    }

    // Terms are formed as `x_j / d_j` rather than `(1/d_j) x_j`: the rounded
    // reciprocal biases every step the same way and makes the total mass drift.
    fn row_dot(&self, i: usize, v: impl Fn(usize) -> f64) -> f64 {
        let range = self.graph.in_ptr[i]..self.graph.in_ptr[i + 1];
        self.graph.in_idx[range.clone()]
            .iter()
            .zip(&self.divisors[range])
            .map(|(&j, d)| v(j) / d)
            .sum()
    }

    /// Computes `A x` for an `n x d` matrix of stacked node vectors.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n(), "row count must equal node count");
        let d = x.ncols();
        let mut out = DMatrix::zeros(self.n(), d);
        for k in 0..d {
            let src = x.column(k);
            let mut dst = out.column_mut(k);
            for i in 0..self.graph.n {
                dst[i] = self.row_dot(i, |j| src[j]);
            }
        }
        out
    }

    pub fn apply_vector(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.n(), "length must equal node count");
        DVector::from_iterator(self.n(), (0..self.n()).map(|i| self.row_dot(i, |j| y[j])))
    }
}

#[derive(Debug, Clone)]
enum SequenceKind {
    Periodic(Vec<Arc<DirectedGraph>>),
    CyclePlusRandom {
        seed: u64,
        cycle: Arc<DirectedGraph>,
    },
    AlternatingStars {
        stars: [Arc<DirectedGraph>; 2],
    },
}

/// A deterministic supplier `t -> G(t)`.
#[derive(Debug, Clone)]
pub struct GraphSequence {
    n: usize,
    kind: SequenceKind,
    declared_b: Option<usize>,
}

impl GraphSequence {
    /// The same graph at every time step.
    pub fn fixed(g: DirectedGraph) -> Result<Self, GraphError> {
        Self::periodic(vec![g])
    }

    /// Cycles through `graphs`, so `G(t) = graphs[t mod len]`.
    pub fn periodic(graphs: Vec<DirectedGraph>) -> Result<Self, GraphError> {
        let n = graphs
            .first()
            .ok_or(GraphError::TooFewNodes { min: 1, got: 0 })?
            .n();
        for g in &graphs {
            if g.n() != n {
                return Err(GraphError::NodeCountMismatch {
                    expected: n,
                    got: g.n(),
                });
            }
            g.validate()?;
        }
        Ok(Self {
            n,
            kind: SequenceKind::Periodic(graphs.into_iter().map(Arc::new).collect()),
            declared_b: None,
        })
    }

    /// Parses `t src dst` lines (0-indexed, `#` comments allowed) into a
    /// periodic sequence whose period is the largest listed `t` plus one.
    /// Self-loops are implied; steps with no listed edges carry self-loops only.
    pub fn from_edge_list(text: &str, n: usize) -> Result<Self, GraphError> {
        let mut per_step: Vec<Vec<(usize, usize)>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| GraphError::EdgeListParse {
                line: lineno + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected `t src dst`, found {} fields",
                    fields.len()
                )));
            }
            let mut nums = [0usize; 3];
            for (slot, field) in nums.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| parse_err(format!("`{field}` is not a non-negative integer")))?;
            }
            let [t, src, dst] = nums;
            if src >= n || dst >= n {
                return Err(parse_err(format!("node index out of range 0..{n}")));
            }
            if per_step.len() <= t {
                per_step.resize(t + 1, Vec::new());
            }
            per_step[t].push((src, dst));
        }
        if per_step.is_empty() {
            per_step.push(Vec::new());
        }
        let graphs = per_step
            .into_iter()
            .map(|edges| DirectedGraph::from_edges(n, edges))
            .collect::<Result<Vec<_>, _>>()?;
        Self::periodic(graphs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn graph_at(&self, t: usize) -> Arc<DirectedGraph> {
        match &self.kind {
            SequenceKind::Periodic(graphs) => Arc::clone(&graphs[t % graphs.len()]),
            SequenceKind::CyclePlusRandom { seed, cycle } => {
                let n = self.n;
                let mut rng = substream(*seed, Domain::Graph, 0, t as u64);
                let out = (0..n)
                    .map(|i| {
                        let mut list = cycle.out_neighbors(i).to_vec();
                        list.push(rng.random_range(0..n));
                        list
                    })
                    .collect();
                Arc::new(
                    DirectedGraph::from_out_neighbors_raw(out)
                        .expect("cycle-plus-random adjacency is in range"),
                )
            }
            SequenceKind::AlternatingStars { stars, .. } => Arc::clone(&stars[t % 2]),
        }
    }

    pub fn mixing_at(&self, t: usize) -> MixingMatrix {
        build_mixing_matrix(self.graph_at(t)).expect("sequence graphs carry self-loops")
    }

    /// Window length for which B-strong-connectivity holds at every `t` by
    /// construction, if the generator guarantees one.
    pub fn connectivity_by_construction(&self) -> Option<usize> {
        match &self.kind {
            SequenceKind::CyclePlusRandom { .. } | SequenceKind::AlternatingStars { .. } => Some(1),
            SequenceKind::Periodic(graphs) => {
                let period = graphs.len();
                // a window of one full period, at any offset, covers every member
                let union = DirectedGraph::union(graphs.iter().map(Arc::as_ref)).ok()?;
                if !is_strongly_connected(&union) {
                    return None;
                }
                (1..=period).find(|&b| {
                    (0..period).all(|start| {
                        let window: Vec<&DirectedGraph> = (start..start + b)
                            .map(|t| graphs[t % period].as_ref())
                            .collect();
                        DirectedGraph::union(window).is_ok_and(|u| is_strongly_connected(&u))
                    })
                })
            }
        }
    }

    pub fn declared_b(&self) -> Option<usize> {
        self.declared_b
    }

    /// Declares `B`, verifying it over `horizon` steps unless a generator
    /// guarantee already covers it.
    pub fn with_declared_b(mut self, b: usize, horizon: usize) -> Result<Self, GraphError> {
        let proven = self
            .connectivity_by_construction()
            .is_some_and(|p| b.is_multiple_of(p));
        if !proven {
            let check = verify_b_strong_connectivity(&self, b, horizon)?;
            if let Some(window) = check.first_failure {
                return Err(GraphError::WindowNotConnected { window });
            }
        }
        self.declared_b = Some(b);
        Ok(self)
    }

    pub fn is_regular_over(&self, horizon: usize) -> bool {
        match &self.kind {
            SequenceKind::Periodic(graphs) => graphs
                .iter()
                .take(horizon.max(1))
                .all(|g| g.regular_degree().is_some()),
            _ => (0..horizon.max(1)).all(|t| self.graph_at(t).regular_degree().is_some()),
        }
    }
}

/// Cycle `i -> i+1` fixed over time plus one out-neighbor per node drawn
/// uniformly at random at every step. The random pick may coincide with the
/// node itself or its cycle successor, in which case the edges merge.
pub fn generate_cycle_plus_random(n: usize, seed: u64) -> Result<GraphSequence, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes { min: 2, got: n });
    }
    let cycle = Arc::new(DirectedGraph::directed_cycle(n)?);
    Ok(GraphSequence {
        n,
        kind: SequenceKind::CyclePlusRandom { seed, cycle },
        declared_b: Some(1),
    })
}

/// Undirected star centred at `hub_a` on even steps and at `hub_b` on odd steps.
pub fn generate_alternating_stars(
    n: usize,
    hub_a: usize,
    hub_b: usize,
) -> Result<GraphSequence, GraphError> {
    if hub_a == hub_b {
        return Err(GraphError::IdenticalHubs { hub: hub_a });
    }
    let stars = [
        Arc::new(DirectedGraph::star(n, hub_a)?),
        Arc::new(DirectedGraph::star(n, hub_b)?),
    ];
    Ok(GraphSequence {
        n,
        kind: SequenceKind::AlternatingStars { stars },
        declared_b: Some(1),
    })
}

/// Outcome of checking every complete length-`B` window inside a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectivityCheck {
    pub windows_checked: usize,
    pub first_failure: Option<usize>,
}

impl ConnectivityCheck {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Checks that the union of `E(kB), ..., E((k+1)B - 1)` is strongly
/// connected for every window `k` that ends before `horizon`.
pub fn verify_b_strong_connectivity(
    seq: &GraphSequence,
    b: usize,
    horizon: usize,
) -> Result<ConnectivityCheck, GraphError> {
    if b == 0 || horizon < b {
        return Err(GraphError::InvalidWindow { b, horizon });
    }
    let windows = horizon / b;
    for k in 0..windows {
        let graphs: Vec<Arc<DirectedGraph>> =
            (k * b..(k + 1) * b).map(|t| seq.graph_at(t)).collect();
        let union = DirectedGraph::union(graphs.iter().map(Arc::as_ref))?;
        if !is_strongly_connected(&union) {
            return Ok(ConnectivityCheck {
                windows_checked: k + 1,
                first_failure: Some(k),
            });
        }
    }
    Ok(ConnectivityCheck {
        windows_checked: windows,
        first_failure: None,
    })
}
