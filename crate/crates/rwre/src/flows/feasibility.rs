//! Demand feasibility on finite directed graphs: given edge capacities,
//! a source x0 and per-vertex demands, either return a flow whose
//! divergence is sum_x p_x at the source and -p_x elsewhere, or certify
//! infeasibility with a violating vertex set K containing x0 whose
//! outgoing cut capacity is below the demand outside K.
//!
//! The reduction attaches an auxiliary sink with one edge (x, delta) of
//! capacity p_x per vertex, then runs shortest-augmenting-path max-flow;
//! the problem is feasible exactly when every auxiliary edge saturates.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use std::collections::VecDeque;
use std::fmt::Debug;
use std::ops::{Add, Sub};

use super::{DirectedGraph, Flow, FlowError};

/// Arithmetic needed by the flow algorithms. Implemented for f64 (fast,
/// tolerance-based) and BigRational (exact certificates).
pub trait FlowNum:
    Clone + PartialOrd + Zero + Add<Output = Self> + Sub<Output = Self> + Debug
{
    /// Residual amounts at or below this threshold count as empty. The
    /// scale is the largest capacity or demand in the problem.
    fn residual_threshold(scale: &Self) -> Self;
    fn clamped_nonneg(self) -> Self;
}

impl FlowNum for f64 {
    fn residual_threshold(scale: &Self) -> Self {
        scale.abs().max(1.0) * 1e-12
    }
    fn clamped_nonneg(self) -> Self {
        self.max(0.0)
    }
}

impl FlowNum for BigRational {
    fn residual_threshold(_scale: &Self) -> Self {
        BigRational::zero()
    }
    fn clamped_nonneg(self) -> Self {
        if self < BigRational::zero() {
            BigRational::zero()
        } else {
            self
        }
    }
}

pub fn rational(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

#[derive(Debug, Clone)]
pub struct DemandProblem<T> {
    /// Capacity per edge id of the graph.
    pub capacities: Vec<T>,
    pub source: usize,
    /// Demand per vertex id. The source's own demand is self-satisfied
    /// and only enters through the divergence identity.
    pub demands: Vec<T>,
}

#[derive(Debug)]
pub enum FeasibilityOutcome<T> {
    Feasible(Flow<T>),
    Infeasible {
        /// Vertices of a violating set K containing the source.
        violating_set: Vec<usize>,
        /// Capacity of the edges leaving K.
        cut_capacity: T,
        /// Total demand outside K; exceeds the cut capacity.
        outside_demand: T,
    },
}

struct Residual<T> {
    to: Vec<usize>,
    cap: Vec<T>,
    adj: Vec<Vec<usize>>,
}

impl<T: FlowNum> Residual<T> {
    fn new(n: usize) -> Self {
        Residual {
            to: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    /// Paired arcs: id and id^1 are each other's reverses.
    fn add(&mut self, u: usize, v: usize, c: T) {
        let id = self.to.len();
        self.to.push(v);
        self.cap.push(c);
        self.adj[u].push(id);
        self.to.push(u);
        self.cap.push(T::zero());
        self.adj[v].push(id + 1);
    }
}

/// Solve the demand problem by max-flow on the auxiliary graph.
pub fn feasible_flow<T: FlowNum>(
    graph: &DirectedGraph,
    problem: &DemandProblem<T>,
) -> Result<FeasibilityOutcome<T>, FlowError> {
    let n = graph.n_vertices();
    if problem.capacities.len() != graph.n_edges() {
        return Err(FlowError::EdgeCountMismatch {
            expected: graph.n_edges(),
            got: problem.capacities.len(),
        });
    }
    if problem.demands.len() != n {
        return Err(FlowError::VertexCountMismatch {
            expected: n,
            got: problem.demands.len(),
        });
    }
    if problem.source >= n {
        return Err(FlowError::VertexOutOfRange {
            vertex: problem.source,
            n,
        });
    }
    for (e, c) in problem.capacities.iter().enumerate() {
        if *c < T::zero() {
            return Err(FlowError::NegativeCapacity(e));
        }
    }
    for (v, p) in problem.demands.iter().enumerate() {
        if *p < T::zero() {
            return Err(FlowError::NegativeDemand(v));
        }
    }

    let mut scale = T::zero();
    for c in problem.capacities.iter().chain(problem.demands.iter()) {
        if *c > scale {
            scale = c.clone();
        }
    }
    let thr = T::residual_threshold(&scale);

    // Vertex n is the auxiliary sink.
    let sink = n;
    let mut res = Residual::new(n + 1);
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        debug_assert_eq!(res.to.len(), 2 * e);
        res.add(u, v, problem.capacities[e].clone());
    }
    // Demand arcs in vertex order, remembered for the saturation check.
    let mut demand_arcs = Vec::new();
    for v in 0..n {
        if problem.demands[v] > T::zero() {
            demand_arcs.push((v, res.to.len()));
            res.add(v, sink, problem.demands[v].clone());
        }
    }

    // Shortest augmenting paths until the sink is unreachable.
    let mut parent_arc = vec![usize::MAX; n + 1];
    loop {
        for p in parent_arc.iter_mut() {
            *p = usize::MAX;
        }
        parent_arc[problem.source] = usize::MAX - 1;
        let mut queue = VecDeque::new();
        queue.push_back(problem.source);
        let mut reached = false;
        'bfs: while let Some(u) = queue.pop_front() {
            for &a in &res.adj[u] {
                let w = res.to[a];
                if parent_arc[w] == usize::MAX && res.cap[a] > thr {
                    parent_arc[w] = a;
                    if w == sink {
                        reached = true;
                        break 'bfs;
                    }
                    queue.push_back(w);
                }
            }
        }
        if !reached {
            break;
        }
        let mut bottleneck: Option<T> = None;
        let mut at = sink;
        while at != problem.source {
            let a = parent_arc[at];
            bottleneck = Some(match bottleneck {
                None => res.cap[a].clone(),
                Some(b) if res.cap[a] < b => res.cap[a].clone(),
                Some(b) => b,
            });
            at = res.to[a ^ 1];
        }
        let f = bottleneck.expect("augmenting path has at least one arc");
        let mut at = sink;
        while at != problem.source {
            let a = parent_arc[at];
            res.cap[a] = res.cap[a].clone() - f.clone();
            res.cap[a ^ 1] = res.cap[a ^ 1].clone() + f.clone();
            at = res.to[a ^ 1];
        }
    }

    let saturated = demand_arcs.iter().all(|&(_, a)| !(res.cap[a] > thr));
    if saturated {
        let values: Vec<T> = (0..graph.n_edges())
            .map(|e| {
                (problem.capacities[e].clone() - res.cap[2 * e].clone()).clamped_nonneg()
            })
            .collect();
        return Ok(FeasibilityOutcome::Feasible(Flow { values }));
    }

    // Residual reachability from the source gives the violating set.
    let mut reachable = vec![false; n + 1];
    reachable[problem.source] = true;
    let mut queue = VecDeque::from([problem.source]);
    while let Some(u) = queue.pop_front() {
        for &a in &res.adj[u] {
            let w = res.to[a];
            if !reachable[w] && res.cap[a] > thr {
                reachable[w] = true;
                queue.push_back(w);
            }
        }
    }
    debug_assert!(!reachable[sink], "sink reachable after max-flow");
    let violating_set: Vec<usize> = (0..n).filter(|&v| reachable[v]).collect();
    let mut cut_capacity = T::zero();
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        if reachable[u] && !reachable[v] {
            cut_capacity = cut_capacity + problem.capacities[e].clone();
        }
    }
    let mut outside_demand = T::zero();
    for v in 0..n {
        if !reachable[v] {
            outside_demand = outside_demand + problem.demands[v].clone();
        }
    }
    Ok(FeasibilityOutcome::Infeasible {
        violating_set,
        cut_capacity,
        outside_demand,
    })
}

/// Exhaustive feasibility oracle over every vertex set K containing the
/// source: feasible iff c(out-cut of K) >= demand outside K for all K.
/// With `restricted`, only sets whose vertices are all reachable from the
/// source through positive-capacity edges inside K are examined.
pub fn cut_oracle_feasible<T: FlowNum>(
    graph: &DirectedGraph,
    problem: &DemandProblem<T>,
    restricted: bool,
) -> bool {
    let n = graph.n_vertices();
    assert!(n <= 20, "oracle is exponential in the vertex count");
    for mask in 0u32..1 << n {
        if mask & (1 << problem.source) == 0 {
            continue;
        }
        if restricted && !internally_reachable(graph, problem, mask) {
            continue;
        }
        let mut cut = T::zero();
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            if mask & (1 << u) != 0 && mask & (1 << v) == 0 {
                cut = cut + problem.capacities[e].clone();
            }
        }
        let mut outside = T::zero();
        for v in 0..n {
            if mask & (1 << v) == 0 {
                outside = outside + problem.demands[v].clone();
            }
        }
        if cut < outside {
            return false;
        }
    }
    true
}

fn internally_reachable<T: FlowNum>(
    graph: &DirectedGraph,
    problem: &DemandProblem<T>,
    mask: u32,
) -> bool {
    let mut seen = 1u32 << problem.source;
    let mut queue = VecDeque::from([problem.source]);
    while let Some(u) = queue.pop_front() {
        for &e in graph.out_edges(u) {
            let v = graph.edge(e).1;
            if mask & (1 << v) != 0 && seen & (1 << v) == 0 && problem.capacities[e] > T::zero() {
                seen |= 1 << v;
                queue.push_back(v);
            }
        }
    }
    seen == mask
}
