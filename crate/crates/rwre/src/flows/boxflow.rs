//! Unit flows through merged lattice boxes. A box of radius R around x
//! has x and x + e_i identified into one source vertex; a feasible flow
//! with per-direction capacities alpha(e)/kappa_i spreads one unit of
//! mass uniformly over the box boundary. Two such boxes are joined by a
//! family of edge-disjoint connector paths, one per boundary site, each
//! carrying the uniform boundary share; the reversed flow of the far box
//! collects the mass into the far merged pair. The assembled flow is a
//! checkable certificate: unit strength, conservation, the capacity
//! bound, compact support, and the strict off-box bound.

use serde::Serialize;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

use super::feasibility::{feasible_flow, DemandProblem, FeasibilityOutcome};
use super::{cancel_support_cycles, divergence, DirectedGraph, Flow, FlowError, Vertex};
use crate::lattice::{canonical_directions, opposite};

/// kappa_i = 2 sum(alpha) - (alpha_i + alpha_{i+d}): the total outgoing
/// capacity of the merged pair under capacities alpha(e)/kappa_i is then
/// exactly one unit.
pub fn kappa_i(alpha: &[f64], i: usize) -> f64 {
    let d = alpha.len() / 2;
    2.0 * alpha.iter().sum::<f64>() - (alpha[i] + alpha[i + d])
}

fn validate_alpha(alpha: &[f64]) -> Result<usize, FlowError> {
    if alpha.len() < 4 || alpha.len() % 2 != 0 {
        return Err(FlowError::BadWeightCount(alpha.len()));
    }
    for (index, &value) in alpha.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FlowError::BadWeight { index, value });
        }
    }
    Ok(alpha.len() / 2)
}

fn sup_dist(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap()
}

/// Sites of the boundary shell of a radius-r box in d dimensions.
pub fn boundary_count(d: usize, r: i64) -> usize {
    let outer = (2 * r + 1).pow(d as u32);
    let inner = (2 * r - 1).pow(d as u32);
    (outer - inner) as usize
}

/// Lattice box with the pair {x, x + e_i} merged into one vertex and the
/// two directed edges between them suppressed.
pub struct BoxGraph {
    pub graph: DirectedGraph,
    pub d: usize,
    pub center: Vec<i64>,
    pub radius: i64,
    pub merge_direction: usize,
    pub merged_id: usize,
    /// Vertex ids of the sup-norm-radius boundary shell, increasing.
    pub boundary_ids: Vec<usize>,
    /// Lattice direction index of each edge.
    pub edge_dir: Vec<usize>,
    site_ids: HashMap<Vec<i64>, usize>,
}

impl BoxGraph {
    pub fn vertex_of_site(&self, site: &[i64]) -> Option<usize> {
        self.site_ids.get(site).copied()
    }
}

fn cube_sites(center: &[i64], r: i64) -> Vec<Vec<i64>> {
    let d = center.len();
    let mut sites = Vec::new();
    let mut off = vec![-r; d];
    loop {
        sites.push(center.iter().zip(&off).map(|(c, o)| c + o).collect());
        let mut k = d;
        loop {
            if k == 0 {
                return sites;
            }
            k -= 1;
            if off[k] < r {
                off[k] += 1;
                for o in off.iter_mut().skip(k + 1) {
                    *o = -r;
                }
                break;
            }
        }
    }
}

pub fn merged_box_graph(center: &[i64], i: usize, r: i64) -> Result<BoxGraph, FlowError> {
    let d = center.len();
    if d < 2 {
        return Err(FlowError::DimensionMismatch { expected: 2, got: d });
    }
    if i >= d {
        return Err(FlowError::DirectionOutOfRange { dir: i, d });
    }
    if r < 2 {
        return Err(FlowError::RadiusTooSmall(r));
    }
    let mut partner = center.to_vec();
    partner[i] += 1;

    let sites = cube_sites(center, r);
    let mut labels = Vec::with_capacity(sites.len() - 1);
    let mut site_ids = HashMap::with_capacity(sites.len());
    let mut boundary_ids = Vec::new();
    let mut merged_id = usize::MAX;
    for site in &sites {
        if *site == partner {
            continue;
        }
        let id = labels.len();
        if *site == *center {
            merged_id = id;
            labels.push(Vertex::MergedPair {
                a: center.to_vec(),
                b: partner.clone(),
            });
        } else {
            labels.push(Vertex::Site(site.clone()));
            if sup_dist(site, center) == r {
                boundary_ids.push(id);
            }
        }
        site_ids.insert(site.clone(), id);
    }
    site_ids.insert(partner, merged_id);

    let mut graph = DirectedGraph::new(labels);
    let mut edge_dir = Vec::new();
    let dirs = canonical_directions(d).expect("dimension checked above");
    for site in &sites {
        let tail = site_ids[site];
        for (dir, step) in dirs.iter().enumerate() {
            let neighbor: Vec<i64> = site.iter().zip(step).map(|(a, b)| a + b).collect();
            if let Some(&head) = site_ids.get(&neighbor) {
                if head == tail {
                    // Both orientations between the merged pair vanish.
                    continue;
                }
                graph.add_edge(tail, head)?;
                edge_dir.push(dir);
            }
        }
    }
    Ok(BoxGraph {
        graph,
        d,
        center: center.to_vec(),
        radius: r,
        merge_direction: i,
        merged_id,
        boundary_ids,
        edge_dir,
        site_ids,
    })
}

/// Parameters of one merged-box flow. Construction enforces the two
/// feasibility requirements: the radius dominates max_i kappa_i / min
/// alpha, and the uniform boundary share is strictly below every edge
/// capacity alpha(e)/kappa_i.
#[derive(Debug, Clone, Serialize)]
pub struct BoxFlowSpec {
    pub center: Vec<i64>,
    pub direction: usize,
    pub radius: i64,
    pub alpha: Vec<f64>,
}

impl BoxFlowSpec {
    pub fn new(
        center: &[i64],
        direction: usize,
        radius: i64,
        alpha: &[f64],
    ) -> Result<Self, FlowError> {
        let d = validate_alpha(alpha)?;
        if center.len() != d {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                got: center.len(),
            });
        }
        if direction >= d {
            return Err(FlowError::DirectionOutOfRange { dir: direction, d });
        }
        if radius < 2 {
            return Err(FlowError::RadiusTooSmall(radius));
        }
        let kappa_max = (0..d).map(|i| kappa_i(alpha, i)).fold(f64::MIN, f64::max);
        let min_alpha = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
        let needed = kappa_max / min_alpha;
        if (radius as f64) < needed {
            return Err(FlowError::RadiusBelowBound { r: radius, needed });
        }
        let boundary = boundary_count(d, radius);
        let min_ratio = min_alpha / kappa_i(alpha, direction);
        if 1.0 / boundary as f64 >= min_ratio {
            return Err(FlowError::BoundaryTooCoarse {
                boundary,
                min_ratio,
            });
        }
        Ok(BoxFlowSpec {
            center: center.to_vec(),
            direction,
            radius,
            alpha: alpha.to_vec(),
        })
    }

    /// Smallest radius meeting both feasibility requirements.
    pub fn with_default_radius(
        center: &[i64],
        direction: usize,
        alpha: &[f64],
    ) -> Result<Self, FlowError> {
        let d = validate_alpha(alpha)?;
        let kappa_max = (0..d).map(|i| kappa_i(alpha, i)).fold(f64::MIN, f64::max);
        let min_alpha = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut r = (kappa_max / min_alpha).ceil().max(2.0) as i64;
        let min_ratio = min_alpha / kappa_i(alpha, direction);
        while 1.0 / boundary_count(d, r) as f64 >= min_ratio {
            r += 1;
        }
        Self::new(center, direction, r, alpha)
    }

    pub fn d(&self) -> usize {
        self.alpha.len() / 2
    }

    pub fn kappa(&self) -> f64 {
        kappa_i(&self.alpha, self.direction)
    }

    pub fn boundary_size(&self) -> usize {
        boundary_count(self.d(), self.radius)
    }
}

pub struct BoxFlow {
    pub graph: BoxGraph,
    pub flow: Flow<f64>,
    pub kappa: f64,
    /// Uniform demand placed on each boundary site.
    pub boundary_share: f64,
}

/// Unit flow out of the merged pair, exiting uniformly through the box
/// boundary, respecting theta(e) <= alpha(e)/kappa_i. Feasibility is a
/// theorem once the radius bound enforced by `BoxFlowSpec::new` holds,
/// so an infeasible outcome here is a bug certificate, not a
/// recoverable condition.
pub fn source_box_flow(spec: &BoxFlowSpec) -> Result<BoxFlow, FlowError> {
    let bg = merged_box_graph(&spec.center, spec.direction, spec.radius)?;
    let kappa = spec.kappa();
    let capacities: Vec<f64> = bg.edge_dir.iter().map(|&dir| spec.alpha[dir] / kappa).collect();
    let share = 1.0 / bg.boundary_ids.len() as f64;
    let mut demands = vec![0.0; bg.graph.n_vertices()];
    for &b in &bg.boundary_ids {
        demands[b] = share;
    }
    let problem = DemandProblem {
        capacities,
        source: bg.merged_id,
        demands,
    };
    match feasible_flow(&bg.graph, &problem)? {
        FeasibilityOutcome::Feasible(mut flow) => {
            // The augmenting solver can leave directed cycles in the
            // support (both orientations of every lattice edge exist
            // here). They carry no divergence, so dropping them keeps
            // the solution feasible and makes path decompositions of
            // the assembled certificate exact.
            cancel_support_cycles(&bg.graph, &mut flow);
            Ok(BoxFlow {
                graph: bg,
                flow,
                kappa,
                boundary_share: share,
            })
        }
        FeasibilityOutcome::Infeasible { violating_set, .. } => panic!(
            "box flow infeasible despite validated spec; violating set {:?}",
            violating_set
        ),
    }
}

/// Signed lattice symmetry used to reduce connector geometry to the case
/// where the second box lies east, with the x-offset dominant.
#[derive(Clone, Copy)]
struct Dihedral {
    swap: bool,
    sx: i64,
}

impl Dihedral {
    fn for_delta(dx: i64, dy: i64) -> Self {
        let swap = dy.abs() > dx.abs();
        let u = if swap { dy } else { dx };
        Dihedral {
            swap,
            sx: if u < 0 { -1 } else { 1 },
        }
    }

    fn apply(&self, p: [i64; 2]) -> [i64; 2] {
        let (a, b) = if self.swap { (p[1], p[0]) } else { (p[0], p[1]) };
        [self.sx * a, b]
    }

    fn invert(&self, q: [i64; 2]) -> [i64; 2] {
        let (a, b) = (self.sx * q[0], q[1]);
        if self.swap {
            [b, a]
        } else {
            [a, b]
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum SideTag {
    Left,
    Right,
    Top,
    Bottom,
}

/// Boundary sites of a radius-r planar box in construction order: west
/// face (south to north, corners included), east face likewise, then the
/// interior of the north and south faces.
fn planar_boundary_order(r: i64) -> Vec<(SideTag, i64)> {
    let mut order = Vec::with_capacity((8 * r) as usize);
    for k in 0..=2 * r {
        order.push((SideTag::Left, k));
    }
    for k in 0..=2 * r {
        order.push((SideTag::Right, k));
    }
    for k in 0..=2 * r - 2 {
        order.push((SideTag::Top, k));
    }
    for k in 0..=2 * r - 2 {
        order.push((SideTag::Bottom, k));
    }
    order
}

fn side_point(center: [i64; 2], r: i64, side: SideTag, k: i64) -> [i64; 2] {
    match side {
        SideTag::Left => [center[0] - r, center[1] - r + k],
        SideTag::Right => [center[0] + r, center[1] - r + k],
        SideTag::Top => [center[0] - r + 1 + k, center[1] + r],
        SideTag::Bottom => [center[0] - r + 1 + k, center[1] - r],
    }
}

#[derive(Debug, Clone)]
pub struct ConnectorFamily {
    /// Vertex sequences, one per boundary site served.
    pub paths: Vec<Vec<Vec<i64>>>,
    /// Reported length-bound constants: every path has at most
    /// k1 * |xB - xA|_1 + k2 edges.
    pub k1: i64,
    pub k2: i64,
}

fn extend_straight(path: &mut Vec<[i64; 2]>, to: [i64; 2]) {
    let from = *path.last().unwrap();
    let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
    assert!(dx == 0 || dy == 0, "waypoints must be axis-aligned");
    let steps = (dx.abs() + dy.abs()) as usize;
    let (sx, sy) = (dx.signum(), dy.signum());
    for s in 1..=steps {
        path.push([from[0] + sx * s as i64, from[1] + sy * s as i64]);
    }
}

/// Edge-disjoint lattice paths from `count` distinct boundary sites of
/// the box around xa to boundary sites of the box around xb, avoiding
/// both box interiors.
///
/// Layout (after rotating the east axis onto the dominant offset): each
/// path owns a private bus row far above or below both boxes, reached by
/// a private riser column next to its own box face; risers and stubs of
/// the two boxes occupy disjoint column bands, so distinct paths can only
/// cross perpendicularly, sharing vertices but never edges.
pub fn connector_paths(
    xa: &[i64],
    xb: &[i64],
    r: i64,
    count: usize,
) -> Result<ConnectorFamily, FlowError> {
    if xa.len() != 2 || xb.len() != 2 {
        return Err(FlowError::DimensionUnsupported(xa.len().max(xb.len())));
    }
    if r < 2 {
        return Err(FlowError::RadiusTooSmall(r));
    }
    let max_count = (8 * r) as usize;
    if count == 0 {
        return Err(FlowError::ZeroCount);
    }
    if count > max_count {
        return Err(FlowError::CountTooLarge {
            count,
            max: max_count,
        });
    }
    let map = Dihedral::for_delta(xb[0] - xa[0], xb[1] - xa[1]);
    let a = map.apply([xa[0], xa[1]]);
    let b = map.apply([xb[0], xb[1]]);
    let dx = b[0] - a[0];
    // Column bands: box faces at +-r, stubs and risers out to +-(3r+1).
    // Bands of the two boxes must not share a column.
    let required = 6 * r + 3;
    if dx < required {
        return Err(FlowError::BoxesTooClose {
            required,
            actual: dx,
        });
    }

    let order = planar_boundary_order(r);
    let y_top = a[1].max(b[1]) + r;
    let y_bot = a[1].min(b[1]) - r;
    let mut up_used = 0i64;
    let mut down_used = 0i64;
    let mut paths = Vec::with_capacity(count);
    for &(side, k) in order.iter().take(count) {
        let start = side_point(a, r, side, k);
        let end = side_point(b, r, side, k);
        let up = match side {
            SideTag::Top => true,
            SideTag::Bottom => false,
            SideTag::Left | SideTag::Right => k >= r,
        };
        let bus_y = if up {
            up_used += 1;
            y_top + up_used
        } else {
            down_used += 1;
            y_bot - down_used
        };
        let mut path = vec![start];
        match side {
            SideTag::Top | SideTag::Bottom => {
                extend_straight(&mut path, [start[0], bus_y]);
                extend_straight(&mut path, [end[0], bus_y]);
                extend_straight(&mut path, end);
            }
            SideTag::Left => {
                let ac = a[0] - r - 1 - k;
                let bc = b[0] - r - 1 - k;
                extend_straight(&mut path, [ac, start[1]]);
                extend_straight(&mut path, [ac, bus_y]);
                extend_straight(&mut path, [bc, bus_y]);
                extend_straight(&mut path, [bc, end[1]]);
                extend_straight(&mut path, end);
            }
            SideTag::Right => {
                let ac = a[0] + r + 1 + k;
                let bc = b[0] + r + 1 + k;
                extend_straight(&mut path, [ac, start[1]]);
                extend_straight(&mut path, [ac, bus_y]);
                extend_straight(&mut path, [bc, bus_y]);
                extend_straight(&mut path, [bc, end[1]]);
                extend_straight(&mut path, end);
            }
        }
        paths.push(
            path.into_iter()
                .map(|p| map.invert(p).to_vec())
                .collect::<Vec<_>>(),
        );
    }
    Ok(ConnectorFamily {
        paths,
        k1: 2,
        k2: 30 * r + 4,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum ConnectorViolation {
    #[error("expected {expected} paths, found {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("path {0} does not start on the source box boundary")]
    StartOffBoundary(usize),
    #[error("paths {0} and {1} share a starting site")]
    DuplicateStart(usize, usize),
    #[error("path {0} does not end on the target box boundary")]
    EndOffBoundary(usize),
    #[error("path {path} breaks at step {index}: not a unit lattice move")]
    BrokenStep { path: usize, index: usize },
    #[error("path {path} enters a box interior at step {index}")]
    InsideExclusion { path: usize, index: usize },
    #[error("path {0} revisits a vertex")]
    RepeatedVertex(usize),
    #[error("paths {0} and {1} traverse a common undirected edge")]
    SharedEdge(usize, usize),
    #[error("path {path} has {len} edges, above the bound {bound}")]
    TooLong { path: usize, len: usize, bound: i64 },
}

/// Audit every contract of a connector family against the two boxes.
pub fn verify_connector_family(
    family: &ConnectorFamily,
    xa: &[i64],
    xb: &[i64],
    r: i64,
    expected_count: usize,
) -> Result<(), ConnectorViolation> {
    if family.paths.len() != expected_count {
        return Err(ConnectorViolation::WrongCount {
            expected: expected_count,
            got: family.paths.len(),
        });
    }
    let l1: i64 = xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).sum();
    let bound = family.k1 * l1 + family.k2;
    let mut starts: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut edges: HashMap<(Vec<i64>, Vec<i64>), usize> = HashMap::new();
    for (pi, path) in family.paths.iter().enumerate() {
        let start = path.first().expect("path has vertices");
        let end = path.last().unwrap();
        if sup_dist(start, xa) != r {
            return Err(ConnectorViolation::StartOffBoundary(pi));
        }
        if let Some(&other) = starts.get(start) {
            return Err(ConnectorViolation::DuplicateStart(other, pi));
        }
        starts.insert(start.clone(), pi);
        if sup_dist(end, xb) != r {
            return Err(ConnectorViolation::EndOffBoundary(pi));
        }
        if path.len() - 1 > bound.max(0) as usize {
            return Err(ConnectorViolation::TooLong {
                path: pi,
                len: path.len() - 1,
                bound,
            });
        }
        let mut seen: HashSet<&Vec<i64>> = HashSet::new();
        for (index, v) in path.iter().enumerate() {
            if !seen.insert(v) {
                return Err(ConnectorViolation::RepeatedVertex(pi));
            }
            let interior = index > 0 && index + 1 < path.len();
            if interior && (sup_dist(v, xa) <= r || sup_dist(v, xb) <= r) {
                return Err(ConnectorViolation::InsideExclusion { path: pi, index });
            }
            if index + 1 < path.len() {
                let w = &path[index + 1];
                let l1_step: i64 = v.iter().zip(w).map(|(p, q)| (p - q).abs()).sum();
                if l1_step != 1 {
                    return Err(ConnectorViolation::BrokenStep { path: pi, index });
                }
                let key = if v < w {
                    (v.clone(), w.clone())
                } else {
                    (w.clone(), v.clone())
                };
                if let Some(&other) = edges.get(&key) {
                    return Err(ConnectorViolation::SharedEdge(other, pi));
                }
                edges.insert(key, pi);
            }
        }
    }
    Ok(())
}

/// Flow certificate bundling the assembled unit flow with everything its
/// verification needs.
pub struct ThetaCertificate {
    pub graph: DirectedGraph,
    pub edge_dir: Vec<usize>,
    pub theta: Flow<f64>,
    pub source: usize,
    pub sink: usize,
    pub alpha: Vec<f64>,
    pub kappa: f64,
    /// Off the two boxes every edge satisfies theta(e) * kappa <= gamma.
    pub gamma: f64,
    /// Vertex ids of the union of the two boxes, increasing.
    pub exceptional: Vec<usize>,
    pub length_constants: (i64, i64),
    pub support_edge_bound: usize,
}

impl ThetaCertificate {
    pub fn support_size(&self) -> usize {
        self.theta.values.iter().filter(|&&t| t > 1e-12).count()
    }
}

/// Assemble the unit flow from the merged pair at xa to the merged pair
/// at xb: source box flow, connector paths each carrying the uniform
/// boundary share, and a collecting flow into the far merged pair.
///
/// The collecting flow is a spreading flow on the reversed graph, so it
/// is solved with the opposite-direction weights and then reversed; each
/// reversed edge then meets its own capacity alpha(e)/kappa_i. The swap
/// leaves every kappa_j unchanged, so the far box is feasible under the
/// same radius.
pub fn build_theta(
    xa: &[i64],
    xb: &[i64],
    i: usize,
    alpha: &[f64],
    r: i64,
) -> Result<ThetaCertificate, FlowError> {
    let spec_a = BoxFlowSpec::new(xa, i, r, alpha)?;
    let d = spec_a.d();
    let alpha_rev: Vec<f64> = (0..alpha.len()).map(|dir| alpha[opposite(d, dir)]).collect();
    let spec_b = BoxFlowSpec::new(xb, i, r, &alpha_rev)?;
    let n_boundary = spec_a.boundary_size();
    let family = connector_paths(xa, xb, r, n_boundary)?;
    let flow_a = source_box_flow(&spec_a)?;
    let flow_b = source_box_flow(&spec_b)?;
    let kappa = spec_a.kappa();
    let share = flow_a.boundary_share;

    // Union vertex table: both boxes first, then connector interiors.
    let mut labels: Vec<Vertex> = Vec::new();
    let mut site_to_union: HashMap<Vec<i64>, usize> = HashMap::new();
    let register_box = |bg: &BoxGraph,
                            labels: &mut Vec<Vertex>,
                            site_to_union: &mut HashMap<Vec<i64>, usize>|
     -> Vec<usize> {
        let mut to_union = Vec::with_capacity(bg.graph.n_vertices());
        for v in 0..bg.graph.n_vertices() {
            let id = labels.len();
            labels.push(bg.graph.label(v).clone());
            match bg.graph.label(v) {
                Vertex::Site(x) => {
                    site_to_union.insert(x.clone(), id);
                }
                Vertex::MergedPair { a, b } => {
                    site_to_union.insert(a.clone(), id);
                    site_to_union.insert(b.clone(), id);
                }
                Vertex::Abstract(_) => unreachable!("box graphs label by site"),
            }
            to_union.push(id);
        }
        to_union
    };
    let a_to_union = register_box(&flow_a.graph, &mut labels, &mut site_to_union);
    let b_to_union = register_box(&flow_b.graph, &mut labels, &mut site_to_union);
    let exceptional: Vec<usize> = (0..labels.len()).collect();
    for path in &family.paths {
        for v in &path[1..path.len() - 1] {
            if !site_to_union.contains_key(v) {
                site_to_union.insert(v.clone(), labels.len());
                labels.push(Vertex::Site(v.clone()));
            }
        }
    }

    let mut graph = DirectedGraph::new(labels);
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edge_dir: Vec<usize> = Vec::new();
    let mut theta: Vec<f64> = Vec::new();
    let mut accumulate = |graph: &mut DirectedGraph,
                          tail: usize,
                          head: usize,
                          dir: usize,
                          value: f64|
     -> Result<(), FlowError> {
        let id = match edge_ids.get(&(tail, head)) {
            Some(&id) => id,
            None => {
                let id = graph.add_edge(tail, head)?;
                edge_ids.insert((tail, head), id);
                edge_dir.push(dir);
                theta.push(0.0);
                id
            }
        };
        debug_assert_eq!(edge_dir[id], dir);
        theta[id] += value;
        Ok(())
    };

    for (e, &(u, v)) in flow_a.graph.graph.edges().iter().enumerate() {
        accumulate(
            &mut graph,
            a_to_union[u],
            a_to_union[v],
            flow_a.graph.edge_dir[e],
            flow_a.flow.values[e],
        )?;
    }
    // The sink box collects: reverse every edge and its flow.
    for (e, &(u, v)) in flow_b.graph.graph.edges().iter().enumerate() {
        accumulate(
            &mut graph,
            b_to_union[v],
            b_to_union[u],
            opposite(d, flow_b.graph.edge_dir[e]),
            flow_b.flow.values[e],
        )?;
    }
    let dirs = canonical_directions(d).expect("connector construction is planar");
    for path in &family.paths {
        for w in path.windows(2) {
            let step: Vec<i64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            let dir = dirs
                .iter()
                .position(|s| *s == step)
                .expect("audited connector steps are unit moves");
            accumulate(
                &mut graph,
                site_to_union[&w[0]],
                site_to_union[&w[1]],
                dir,
                share,
            )?;
        }
    }

    let l1: i64 = xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).sum();
    let support_edge_bound = flow_a.graph.graph.n_edges()
        + flow_b.graph.graph.n_edges()
        + n_boundary * (family.k1 * l1 + family.k2) as usize;
    Ok(ThetaCertificate {
        source: a_to_union[flow_a.graph.merged_id],
        sink: b_to_union[flow_b.graph.merged_id],
        graph,
        edge_dir,
        theta: Flow { values: theta },
        alpha: alpha.to_vec(),
        kappa,
        gamma: kappa * share,
        exceptional,
        length_constants: (family.k1, family.k2),
        support_edge_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail { witness: String },
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub unit_strength: CheckOutcome,
    pub divergence_support: CheckOutcome,
    pub capacity: CheckOutcome,
    pub compact_support: CheckOutcome,
    pub exceptional_bound: CheckOutcome,
}

impl CertificateReport {
    pub fn all_pass(&self) -> bool {
        self.unit_strength.passed()
            && self.divergence_support.passed()
            && self.capacity.passed()
            && self.compact_support.passed()
            && self.exceptional_bound.passed()
    }
}

const CERT_DIV_TOL: f64 = 1e-10;
const CERT_EDGE_TOL: f64 = 1e-12;

/// Audit every property the certificate claims, reporting the witnessing
/// edge or vertex on failure. Pure: works on tampered inputs.
pub fn verify_flow_certificate(cert: &ThetaCertificate) -> CertificateReport {
    let g = &cert.graph;
    let div_at = |v: usize| divergence(g, &cert.theta, v).expect("vertex in graph");

    let unit_strength = {
        let ds = div_at(cert.source);
        let dt = div_at(cert.sink);
        if (ds - 1.0).abs() > CERT_DIV_TOL {
            CheckOutcome::Fail {
                witness: format!("source {} has divergence {ds}", g.label(cert.source)),
            }
        } else if (dt + 1.0).abs() > CERT_DIV_TOL {
            CheckOutcome::Fail {
                witness: format!("sink {} has divergence {dt}", g.label(cert.sink)),
            }
        } else {
            CheckOutcome::Pass
        }
    };

    let mut divergence_support = CheckOutcome::Pass;
    for v in 0..g.n_vertices() {
        if v == cert.source || v == cert.sink {
            continue;
        }
        let dv = div_at(v);
        if dv.abs() > CERT_DIV_TOL {
            divergence_support = CheckOutcome::Fail {
                witness: format!("vertex {} has divergence {dv}", g.label(v)),
            };
            break;
        }
    }

    let mut capacity = CheckOutcome::Pass;
    for e in 0..g.n_edges() {
        let t = cert.theta.values[e];
        let cap = cert.alpha[cert.edge_dir[e]] / cert.kappa;
        if t < -CERT_EDGE_TOL || t > cap + CERT_EDGE_TOL {
            capacity = CheckOutcome::Fail {
                witness: format!(
                    "edge {} carries {t}, capacity {cap}",
                    g.describe_edge(e)
                ),
            };
            break;
        }
    }

    let support = cert.support_size();
    let compact_support = if support <= cert.support_edge_bound {
        CheckOutcome::Pass
    } else {
        CheckOutcome::Fail {
            witness: format!(
                "support has {support} edges, bound {}",
                cert.support_edge_bound
            ),
        }
    };

    let exceptional: HashSet<usize> = cert.exceptional.iter().copied().collect();
    let min_alpha = cert.alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut exceptional_bound = if cert.gamma < min_alpha {
        CheckOutcome::Pass
    } else {
        CheckOutcome::Fail {
            witness: format!("gamma {} is not below min alpha {min_alpha}", cert.gamma),
        }
    };
    if exceptional_bound.passed() {
        for e in 0..g.n_edges() {
            let (u, v) = g.edge(e);
            if exceptional.contains(&u) && exceptional.contains(&v) {
                continue;
            }
            let scaled = cert.theta.values[e] * cert.kappa;
            if scaled > cert.gamma + CERT_EDGE_TOL {
                exceptional_bound = CheckOutcome::Fail {
                    witness: format!(
                        "off-box edge {} has theta*kappa = {scaled} > gamma = {}",
                        g.describe_edge(e),
                        cert.gamma
                    ),
                };
                break;
            }
        }
    }

    CertificateReport {
        unit_strength,
        divergence_support,
        capacity,
        compact_support,
        exceptional_bound,
    }
}
