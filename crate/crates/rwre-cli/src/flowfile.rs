use serde::{Deserialize, Serialize};

use rwre::flows::{DirectedGraph, Flow, ThetaCertificate, Vertex};

use crate::CliError;

/// On-disk form of a flow certificate. Everything the verifier needs is
/// spelled out; nothing is recomputed from the construction, so a stored
/// file can be checked years later (or after hand edits) on its own terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowFile {
    pub d: usize,
    pub xa: Vec<i64>,
    pub xb: Vec<i64>,
    pub direction: usize,
    pub radius: i64,
    pub alpha: Vec<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub length_constants: (i64, i64),
    pub support_edge_bound: usize,
    pub source: usize,
    pub sink: usize,
    pub exceptional: Vec<usize>,
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexSpec {
    Abstract(u32),
    Site(Vec<i64>),
    Merged { a: Vec<i64>, b: Vec<i64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub tail: usize,
    pub head: usize,
    /// Lattice direction the edge travels, indexing alpha.
    pub dir: usize,
    pub theta: f64,
}

pub fn from_certificate(
    cert: &ThetaCertificate,
    xa: &[i64],
    xb: &[i64],
    direction: usize,
    radius: i64,
) -> FlowFile {
    let vertices = (0..cert.graph.n_vertices())
        .map(|v| match cert.graph.label(v) {
            Vertex::Abstract(k) => VertexSpec::Abstract(*k),
            Vertex::Site(x) => VertexSpec::Site(x.clone()),
            Vertex::MergedPair { a, b } => VertexSpec::Merged {
                a: a.clone(),
                b: b.clone(),
            },
        })
        .collect();
    let edges = (0..cert.graph.n_edges())
        .map(|e| {
            let (tail, head) = cert.graph.edge(e);
            EdgeSpec {
                tail,
                head,
                dir: cert.edge_dir[e],
                theta: cert.theta.values[e],
            }
        })
        .collect();
    FlowFile {
        d: xa.len(),
        xa: xa.to_vec(),
        xb: xb.to_vec(),
        direction,
        radius,
        alpha: cert.alpha.clone(),
        kappa: cert.kappa,
        gamma: cert.gamma,
        length_constants: cert.length_constants,
        support_edge_bound: cert.support_edge_bound,
        source: cert.source,
        sink: cert.sink,
        exceptional: cert.exceptional.clone(),
        vertices,
        edges,
    }
}

pub fn to_certificate(file: &FlowFile) -> Result<ThetaCertificate, CliError> {
    let labels = file
        .vertices
        .iter()
        .map(|v| match v {
            VertexSpec::Abstract(k) => Vertex::Abstract(*k),
            VertexSpec::Site(x) => Vertex::Site(x.clone()),
            VertexSpec::Merged { a, b } => Vertex::MergedPair {
                a: a.clone(),
                b: b.clone(),
            },
        })
        .collect();
    let mut graph = DirectedGraph::new(labels);
    let mut edge_dir = Vec::with_capacity(file.edges.len());
    let mut theta = Vec::with_capacity(file.edges.len());
    for (i, e) in file.edges.iter().enumerate() {
        graph
            .add_edge(e.tail, e.head)
            .map_err(|err| CliError::Config(format!("flow file edge {i}: {err}")))?;
        if e.dir >= file.alpha.len() {
            return Err(CliError::Config(format!(
                "flow file edge {i}: direction {} out of range for {} weights",
                e.dir,
                file.alpha.len()
            )));
        }
        edge_dir.push(e.dir);
        theta.push(e.theta);
    }
    let n = graph.n_vertices();
    for (what, v) in [("source", file.source), ("sink", file.sink)] {
        if v >= n {
            return Err(CliError::Config(format!(
                "flow file {what} index {v} out of range for {n} vertices"
            )));
        }
    }
    for &v in &file.exceptional {
        if v >= n {
            return Err(CliError::Config(format!(
                "flow file exceptional vertex {v} out of range for {n} vertices"
            )));
        }
    }
    let theta = Flow::from_values(&graph, theta)
        .map_err(|err| CliError::Config(format!("flow file: {err}")))?;
    Ok(ThetaCertificate {
        graph,
        edge_dir,
        theta,
        source: file.source,
        sink: file.sink,
        alpha: file.alpha.clone(),
        kappa: file.kappa,
        gamma: file.gamma,
        exceptional: file.exceptional.clone(),
        length_constants: file.length_constants,
        support_edge_bound: file.support_edge_bound,
    })
}
