//! Finite directed graphs carrying flows: divergence bookkeeping, a
//! demand-feasibility solver with min-cut infeasibility certificates,
//! unit flows through merged lattice boxes with connector paths between
//! distant boxes, and decomposition of unit flows into weighted paths.

pub mod boxflow;
pub mod feasibility;

pub use boxflow::{
    boundary_count, build_theta, connector_paths, kappa_i, merged_box_graph, source_box_flow,
    verify_connector_family, verify_flow_certificate, BoxFlow, BoxFlowSpec, BoxGraph,
    CertificateReport, CheckOutcome, ConnectorFamily, ConnectorViolation, ThetaCertificate,
};
pub use feasibility::{
    cut_oracle_feasible, feasible_flow, rational, DemandProblem, FeasibilityOutcome, FlowNum,
};

use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("vertex {vertex} out of range for graph with {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("self-loop at vertex {0} rejected")]
    SelfLoop(usize),
    #[error("expected {expected} per-edge values, got {got}")]
    EdgeCountMismatch { expected: usize, got: usize },
    #[error("expected {expected} per-vertex values, got {got}")]
    VertexCountMismatch { expected: usize, got: usize },
    #[error("negative capacity on edge {0}")]
    NegativeCapacity(usize),
    #[error("negative demand at vertex {0}")]
    NegativeDemand(usize),
    #[error("not a unit source-to-sink flow: {0}")]
    NotUnitFlow(String),
    #[error("box radius {0} too small; merging needs radius at least 2")]
    RadiusTooSmall(i64),
    #[error("radius {r} below the feasibility bound {needed:.3}")]
    RadiusBelowBound { r: i64, needed: f64 },
    #[error("uniform boundary share 1/{boundary} is not below min alpha(e)/kappa = {min_ratio:.6}")]
    BoundaryTooCoarse { boundary: usize, min_ratio: f64 },
    #[error("weight vector must have even length >= 4, got {0}")]
    BadWeightCount(usize),
    #[error("weight {value} at index {index} must be positive and finite")]
    BadWeight { index: usize, value: f64 },
    #[error("direction index {dir} out of range for d = {d}")]
    DirectionOutOfRange { dir: usize, d: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("connector construction only implemented for d = 2, got d = {0}")]
    DimensionUnsupported(usize),
    #[error("boxes too close: need axis separation >= {required}, have {actual}")]
    BoxesTooClose { required: i64, actual: i64 },
    #[error("requested {count} connector paths but the box boundary has {max} sites")]
    CountTooLarge { count: usize, max: usize },
    #[error("path count must be at least 1")]
    ZeroCount,
}

/// Vertex identity. Lattice constructions label vertices with their site,
/// or with the pair of sites a merge identified.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Vertex {
    Abstract(u32),
    Site(Vec<i64>),
    MergedPair { a: Vec<i64>, b: Vec<i64> },
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Abstract(k) => write!(f, "v{k}"),
            Vertex::Site(x) => write!(f, "{x:?}"),
            Vertex::MergedPair { a, b } => write!(f, "{a:?}~{b:?}"),
        }
    }
}

/// Finite directed graph over dense vertex ids. Parallel edges are
/// permitted; self-loops are not.
#[derive(Debug, Clone)]
pub struct DirectedGraph {
    labels: Vec<Vertex>,
    edges: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl DirectedGraph {
    pub fn new(labels: Vec<Vertex>) -> Self {
        let n = labels.len();
        DirectedGraph {
            labels,
            edges: Vec::new(),
            out_edges: vec![Vec::new(); n],
            in_edges: vec![Vec::new(); n],
        }
    }

    pub fn with_abstract_vertices(n: usize) -> Self {
        Self::new((0..n).map(|k| Vertex::Abstract(k as u32)).collect())
    }

    pub fn add_edge(&mut self, tail: usize, head: usize) -> Result<usize, FlowError> {
        let n = self.n_vertices();
        for v in [tail, head] {
            if v >= n {
                return Err(FlowError::VertexOutOfRange { vertex: v, n });
            }
        }
        if tail == head {
            return Err(FlowError::SelfLoop(tail));
        }
        let id = self.edges.len();
        self.edges.push((tail, head));
        self.out_edges[tail].push(id);
        self.in_edges[head].push(id);
        Ok(id)
    }

    pub fn n_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    pub fn label(&self, v: usize) -> &Vertex {
        &self.labels[v]
    }

    pub fn describe_edge(&self, id: usize) -> String {
        let (t, h) = self.edges[id];
        format!("{} -> {}", self.labels[t], self.labels[h])
    }
}

/// Edge values of a flow, indexed like the graph's edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow<T> {
    pub values: Vec<T>,
}

impl<T: FlowNum> Flow<T> {
    pub fn zero(graph: &DirectedGraph) -> Self {
        Flow {
            values: (0..graph.n_edges()).map(|_| T::zero()).collect(),
        }
    }

    pub fn from_values(graph: &DirectedGraph, values: Vec<T>) -> Result<Self, FlowError> {
        if values.len() != graph.n_edges() {
            return Err(FlowError::EdgeCountMismatch {
                expected: graph.n_edges(),
                got: values.len(),
            });
        }
        Ok(Flow { values })
    }
}

/// Outflow minus inflow at a vertex.
pub fn divergence<T: FlowNum>(
    graph: &DirectedGraph,
    flow: &Flow<T>,
    vertex: usize,
) -> Result<T, FlowError> {
    if vertex >= graph.n_vertices() {
        return Err(FlowError::VertexOutOfRange {
            vertex,
            n: graph.n_vertices(),
        });
    }
    let mut div = T::zero();
    for &e in graph.out_edges(vertex) {
        div = div + flow.values[e].clone();
    }
    for &e in graph.in_edges(vertex) {
        div = div - flow.values[e].clone();
    }
    Ok(div)
}

const SUPPORT_EPS: f64 = 1e-12;
const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Vertex sequences with their weights.
    pub paths: Vec<(Vec<usize>, f64)>,
    /// Total flow removed while cancelling directed cycles in the support.
    pub cancelled_cycle_mass: f64,
}

/// Cancel every directed cycle in the support of `flow`, returning the
/// total mass removed. Divergence is unchanged at every vertex and no
/// edge value increases, so any capacity, demand or support bound that
/// held before still holds; the remaining support is acyclic.
pub fn cancel_support_cycles(graph: &DirectedGraph, flow: &mut Flow<f64>) -> f64 {
    let mut cancelled = 0.0;
    while let Some(cycle) = find_support_cycle(graph, &flow.values) {
        let m = cycle
            .iter()
            .map(|&e| flow.values[e])
            .fold(f64::INFINITY, f64::min);
        for &e in &cycle {
            flow.values[e] -= m;
            if flow.values[e] <= SUPPORT_EPS {
                flow.values[e] = 0.0;
            }
        }
        cancelled += m;
    }
    cancelled
}

/// Split a unit source-to-sink flow into weighted source-to-sink paths.
///
/// Any directed cycle in the support is cancelled first; cycle mass does
/// not contribute to the source-to-sink strength, and removing it is what
/// guarantees each extraction step makes progress. Each step peels a path
/// carrying the minimum edge value along it, zeroing at least one edge,
/// so there are at most as many paths as support edges. The returned
/// weights sum to 1 and reconstruct the cycle-free part edge by edge.
pub fn path_decomposition(
    graph: &DirectedGraph,
    flow: &Flow<f64>,
    source: usize,
    sink: usize,
) -> Result<Decomposition, FlowError> {
    let n = graph.n_vertices();
    for v in [source, sink] {
        if v >= n {
            return Err(FlowError::VertexOutOfRange { vertex: v, n });
        }
    }
    for (e, &v) in flow.values.iter().enumerate() {
        if v < -SUPPORT_EPS || !v.is_finite() {
            return Err(FlowError::NotUnitFlow(format!(
                "edge {} carries {v}",
                graph.describe_edge(e)
            )));
        }
    }
    for v in 0..n {
        let div = divergence(graph, flow, v)?;
        let expected = if v == source {
            1.0
        } else if v == sink {
            -1.0
        } else {
            0.0
        };
        if (div - expected).abs() > UNIT_TOL {
            return Err(FlowError::NotUnitFlow(format!(
                "divergence {div} at {} (expected {expected})",
                graph.label(v)
            )));
        }
    }

    let mut remainder = flow.clone();
    let cancelled = cancel_support_cycles(graph, &mut remainder);
    let mut theta = remainder.values;

    let mut paths = Vec::new();
    loop {
        // Greedy walk along the lowest-id support edge; conservation and
        // acyclicity force arrival at the sink.
        let mut at = source;
        let mut vertices = vec![source];
        let mut edge_ids = Vec::new();
        if !graph
            .out_edges(source)
            .iter()
            .any(|&e| theta[e] > SUPPORT_EPS)
        {
            break;
        }
        while at != sink {
            let &e = graph
                .out_edges(at)
                .iter()
                .find(|&&e| theta[e] > SUPPORT_EPS)
                .expect("positive divergence must continue to the sink");
            at = graph.edge(e).1;
            vertices.push(at);
            edge_ids.push(e);
            assert!(
                vertices.len() <= n + 1,
                "support cycle survived cancellation"
            );
        }
        let p = edge_ids
            .iter()
            .map(|&e| theta[e])
            .fold(f64::INFINITY, f64::min);
        for &e in &edge_ids {
            theta[e] -= p;
            if theta[e] <= SUPPORT_EPS {
                theta[e] = 0.0;
            }
        }
        paths.push((vertices, p));
    }
    Ok(Decomposition {
        paths,
        cancelled_cycle_mass: cancelled,
    })
}

/// First directed cycle among edges above the support threshold, as edge
/// ids in traversal order.
fn find_support_cycle(graph: &DirectedGraph, theta: &[f64]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let n = graph.n_vertices();
    let mut color = vec![Color::White; n];
    // entered_by[v] = support edge used to reach v on the current stack.
    let mut entered_by = vec![usize::MAX; n];
    for start in 0..n {
        if color[start] != Color::White {
            continue;
        }
        // Iterative DFS with an explicit edge cursor per stack frame.
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        color[start] = Color::Gray;
        while let Some(&(v, cursor)) = stack.last() {
            if cursor >= graph.out_edges(v).len() {
                color[v] = Color::Black;
                stack.pop();
                continue;
            }
            stack.last_mut().unwrap().1 += 1;
            let e = graph.out_edges(v)[cursor];
            if theta[e] <= SUPPORT_EPS {
                continue;
            }
            let w = graph.edge(e).1;
            match color[w] {
                Color::Gray => {
                    // Found a cycle: unwind the stack from w back to v.
                    let mut cycle = vec![e];
                    let mut at = v;
                    while at != w {
                        let back = entered_by[at];
                        cycle.push(back);
                        at = graph.edge(back).0;
                    }
                    cycle.reverse();
                    return Some(cycle);
                }
                Color::White => {
                    color[w] = Color::Gray;
                    entered_by[w] = e;
                    stack.push((w, 0));
                }
                Color::Black => {}
            }
        }
    }
    None
}
