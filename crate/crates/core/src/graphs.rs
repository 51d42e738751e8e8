//! Weighted bipartite (trial-treatment) and unipartite (treatment) graphs,
//! their matrix representations and evidence-flow networks.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModelSpec, NmaDataset};
use crate::error::{Error, Result};
use crate::hat::DirectEvidence;
use crate::linalg::{Label, LabeledMatrix, LabeledRow};

/// Flows smaller than this are treated as structurally absent.
pub const FLOW_EPSILON: f64 = 1e-12;

/// Oriented incidence of an edge list: -1 at the first node, +1 at the second.
pub fn oriented_edge_incidence(n_nodes: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(edges.len(), n_nodes);
    for (r, &(j, k)) in edges.iter().enumerate() {
        b[(r, j)] = -1.0;
        b[(r, k)] = 1.0;
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BipartiteEdge {
    pub trial: usize,
    pub treatment: usize,
    pub weight: f64,
}

/// Trials are top nodes, treatments bottom nodes, arms the edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub trials: Vec<String>,
    pub treatments: Vec<String>,
    /// One edge per arm, in canonical arm order.
    pub edges: Vec<BipartiteEdge>,
    pub trial_strength: Vec<f64>,
    pub treatment_strength: Vec<f64>,
}

/// Arm weights `1 / (s^2 + tau^2 / 2)`.
pub fn bipartite_from_dataset(dataset: &NmaDataset, spec: &ModelSpec) -> BipartiteGraph {
    let half = spec.tau2() / 2.0;
    let edges: Vec<BipartiteEdge> = dataset
        .arms()
        .iter()
        .map(|a| BipartiteEdge {
            trial: a.trial.0,
            treatment: a.treatment.0,
            weight: 1.0 / (a.variance + half),
        })
        .collect();
    let mut trial_strength = vec![0.0; dataset.n_trials()];
    let mut treatment_strength = vec![0.0; dataset.n_treatments()];
    for e in &edges {
        trial_strength[e.trial] += e.weight;
        treatment_strength[e.treatment] += e.weight;
    }
    BipartiteGraph {
        trials: dataset.trials().to_vec(),
        treatments: dataset.treatments().to_vec(),
        edges,
        trial_strength,
        treatment_strength,
    }
}

impl BipartiteGraph {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn trial_labels(&self) -> Vec<Label> {
        self.trials.iter().map(Label::trial).collect()
    }

    pub fn treatment_labels(&self) -> Vec<Label> {
        self.treatments.iter().map(Label::treatment).collect()
    }

    /// Trials first, then treatments.
    pub fn node_labels(&self) -> Vec<Label> {
        let mut v = self.trial_labels();
        v.extend(self.treatment_labels());
        v
    }

    pub fn edge_labels(&self) -> Vec<Label> {
        self.edges
            .iter()
            .map(|e| Label::arm(&self.trials[e.trial], &self.treatments[e.treatment]))
            .collect()
    }

    pub fn biadjacency_values(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n_trials(), self.n_treatments());
        for e in &self.edges {
            b[(e.trial, e.treatment)] = e.weight;
        }
        b
    }

    /// Weighted M x N biadjacency B.
    pub fn biadjacency(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_labels: self.trial_labels(),
            col_labels: self.treatment_labels(),
            values: self.biadjacency_values(),
        }
    }

    /// `[[0, B], [B', 0]]` over trials then treatments.
    pub fn adjacency(&self) -> LabeledMatrix {
        let (m, n) = (self.n_trials(), self.n_treatments());
        let mut a = DMatrix::zeros(m + n, m + n);
        for e in &self.edges {
            a[(e.trial, m + e.treatment)] = e.weight;
            a[(m + e.treatment, e.trial)] = e.weight;
        }
        LabeledMatrix {
            row_labels: self.node_labels(),
            col_labels: self.node_labels(),
            values: a,
        }
    }

    /// Arms x (trials, treatments). Oriented rows carry -1 at the trial and
    /// +1 at the treatment.
    pub fn incidence(&self, oriented: bool) -> LabeledMatrix {
        let m = self.n_trials();
        let mut b = DMatrix::zeros(self.edges.len(), m + self.n_treatments());
        for (r, e) in self.edges.iter().enumerate() {
            b[(r, e.trial)] = if oriented { -1.0 } else { 1.0 };
            b[(r, m + e.treatment)] = 1.0;
        }
        LabeledMatrix {
            row_labels: self.edge_labels(),
            col_labels: self.node_labels(),
            values: b,
        }
    }

    /// Treatment pairs sharing a trial, `j < k`.
    pub fn projected_edges(&self) -> Vec<(usize, usize)> {
        let mut by_trial = vec![Vec::new(); self.n_trials()];
        for e in &self.edges {
            by_trial[e.trial].push(e.treatment);
        }
        let mut set = BTreeSet::new();
        for ts in by_trial {
            for (a, &j) in ts.iter().enumerate() {
                for &k in &ts[a + 1..] {
                    set.insert((j.min(k), j.max(k)));
                }
            }
        }
        set.into_iter().collect()
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let m = self.n_trials();
        let mut adj = vec![Vec::new(); m + self.n_treatments()];
        for e in &self.edges {
            adj[e.trial].push(m + e.treatment);
            adj[m + e.treatment].push(e.trial);
        }
        adj
    }

    pub fn metrics(&self) -> BipartiteMetrics {
        let adj = self.neighbours();
        let m = self.n_trials();
        let (radius, mean_distance) = distance_summary(&adj);
        BipartiteMetrics {
            trials: m,
            treatments: self.n_treatments(),
            edges: self.edges.len(),
            density: self.edges.len() as f64 / (m * self.n_treatments()) as f64,
            trial_degree: DegreeStats::of(adj[..m].iter().map(Vec::len)),
            treatment_degree: DegreeStats::of(adj[m..].iter().map(Vec::len)),
            radius,
            mean_distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnipartiteEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Treatments joined by aggregate (direct-evidence) weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnipartiteGraph {
    pub treatments: Vec<String>,
    pub edges: Vec<UnipartiteEdge>,
}

impl UnipartiteGraph {
    pub fn from_evidence(evidence: &DirectEvidence) -> Self {
        Self {
            treatments: evidence.treatments.clone(),
            edges: evidence
                .edges
                .iter()
                .zip(&evidence.weights)
                .map(|(&(from, to), &weight)| UnipartiteEdge { from, to, weight })
                .collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.treatments.len()
    }

    pub fn node_labels(&self) -> Vec<Label> {
        self.treatments.iter().map(Label::treatment).collect()
    }

    pub fn edge_labels(&self) -> Vec<Label> {
        self.edges
            .iter()
            .map(|e| Label::edge(&self.treatments[e.from], &self.treatments[e.to]))
            .collect()
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.from, e.to)).collect()
    }

    pub fn adjacency(&self) -> LabeledMatrix {
        let n = self.n_nodes();
        let mut a = DMatrix::zeros(n, n);
        for e in &self.edges {
            a[(e.from, e.to)] = e.weight;
            a[(e.to, e.from)] = e.weight;
        }
        LabeledMatrix {
            row_labels: self.node_labels(),
            col_labels: self.node_labels(),
            values: a,
        }
    }

    pub fn incidence(&self, oriented: bool) -> LabeledMatrix {
        let mut b = oriented_edge_incidence(self.n_nodes(), &self.edge_pairs());
        if !oriented {
            b = b.abs();
        }
        LabeledMatrix {
            row_labels: self.edge_labels(),
            col_labels: self.node_labels(),
            values: b,
        }
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        adj
    }

    pub fn metrics(&self) -> UnipartiteMetrics {
        let adj = self.neighbours();
        let n = self.n_nodes();
        let (radius, mean_distance) = distance_summary(&adj);
        UnipartiteMetrics {
            nodes: n,
            edges: self.edges.len(),
            density: if n < 2 {
                0.0
            } else {
                self.edges.len() as f64 / (n * (n - 1) / 2) as f64
            },
            degree: DegreeStats::of(adj.iter().map(Vec::len)),
            radius,
            mean_distance,
        }
    }
}

/// Treatment graph induced by trial cliques, weighted by the aggregate
/// direct-evidence weights.
pub fn unipartite_projection(graph: &BipartiteGraph, evidence: &DirectEvidence) -> Result<UnipartiteGraph> {
    if graph.treatments != evidence.treatments || graph.projected_edges() != evidence.edges {
        return Err(Error::DimensionMismatch(
            "direct evidence was computed on a different network".into(),
        ));
    }
    Ok(UnipartiteGraph::from_evidence(evidence))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl DegreeStats {
    fn of(degrees: impl Iterator<Item = usize>) -> Self {
        let (mut sum, mut count, mut min, mut max) = (0usize, 0usize, usize::MAX, 0usize);
        for d in degrees {
            sum += d;
            count += 1;
            min = min.min(d);
            max = max.max(d);
        }
        if count == 0 {
            return Self {
                mean: 0.0,
                min: 0,
                max: 0,
            };
        }
        Self {
            mean: sum as f64 / count as f64,
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BipartiteMetrics {
    pub trials: usize,
    pub treatments: usize,
    pub edges: usize,
    /// Arms over all possible trial-treatment pairs, `K / (N M)`.
    pub density: f64,
    pub trial_degree: DegreeStats,
    pub treatment_degree: DegreeStats,
    pub radius: usize,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnipartiteMetrics {
    pub nodes: usize,
    pub edges: usize,
    pub density: f64,
    pub degree: DegreeStats,
    pub radius: usize,
    pub mean_distance: f64,
}

/// Radius and mean pairwise hop distance of a connected graph, by BFS from
/// every node.
fn distance_summary(adj: &[Vec<usize>]) -> (usize, f64) {
    let n = adj.len();
    if n < 2 {
        return (0, 0.0);
    }
    let mut radius = usize::MAX;
    let mut total = 0usize;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        dist.fill(usize::MAX);
        dist[s] = 0;
        queue.push_back(s);
        let mut ecc = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    ecc = ecc.max(dist[v]);
                    total += dist[v];
                    queue.push_back(v);
                }
            }
        }
        radius = radius.min(ecc);
    }
    (radius, total as f64 / (n * (n - 1)) as f64)
}

/// Edge labels of either graph, in hat-matrix column order.
pub trait EdgeSet {
    fn edge_labels(&self) -> Vec<Label>;
}

impl EdgeSet for BipartiteGraph {
    fn edge_labels(&self) -> Vec<Label> {
        BipartiteGraph::edge_labels(self)
    }
}

impl EdgeSet for UnipartiteGraph {
    fn edge_labels(&self) -> Vec<Label> {
        UnipartiteGraph::edge_labels(self)
    }
}

/// One directed flow. `value` is signed relative to the edge orientation
/// (trial -> treatment, or lower -> higher treatment); `from`/`to` give the
/// direction the evidence actually travels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub edge: Label,
    pub from: Label,
    pub to: Label,
    pub value: f64,
    pub magnitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub source: String,
    pub sink: String,
    pub flows: Vec<Flow>,
}

/// The two endpoints of an edge label in orientation order.
pub fn edge_endpoints(edge: &Label) -> Result<(Label, Label)> {
    match edge {
        Label::Arm { trial, treatment } => Ok((Label::trial(trial), Label::treatment(treatment))),
        Label::Edge { from, to } => Ok((Label::treatment(from), Label::treatment(to))),
        other => Err(Error::DimensionMismatch(format!("`{other}` is not an edge"))),
    }
}

impl FlowNetwork {
    /// Reads signed per-edge values as flows, without checking conservation.
    pub fn from_values(
        source: &str,
        sink: &str,
        edges: &[Label],
        values: &[f64],
        std_errors: Option<&[f64]>,
    ) -> Result<Self> {
        if edges.len() != values.len() || std_errors.is_some_and(|s| s.len() != values.len()) {
            return Err(Error::DimensionMismatch("one value per edge required".into()));
        }
        let mut flows = Vec::with_capacity(edges.len());
        for (i, (edge, &value)) in edges.iter().zip(values).enumerate() {
            let (a, b) = edge_endpoints(edge)?;
            let (from, to) = if value < 0.0 { (b, a) } else { (a, b) };
            flows.push(Flow {
                edge: edge.clone(),
                from,
                to,
                value,
                magnitude: value.abs(),
                std_error: std_errors.map(|s| s[i]),
            });
        }
        Ok(Self {
            source: source.to_string(),
            sink: sink.to_string(),
            flows,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.value).collect()
    }

    /// Largest deviation from unit outflow at the source, unit inflow at the
    /// sink and balance everywhere else, with the offending node.
    pub fn conservation_residual(&self) -> (Label, f64) {
        let mut net: Vec<(Label, f64)> = Vec::new();
        let mut add = |node: &Label, x: f64| match net.iter_mut().find(|(l, _)| l == node) {
            Some(entry) => entry.1 += x,
            None => net.push((node.clone(), x)),
        };
        for f in &self.flows {
            let (a, b) = edge_endpoints(&f.edge).expect("flows are built from edges");
            add(&a, f.value);
            add(&b, -f.value);
        }
        let source = Label::treatment(&self.source);
        let sink = Label::treatment(&self.sink);
        let mut worst = (source.clone(), 0.0);
        let mut seen_source = false;
        let mut seen_sink = false;
        for (node, out) in &net {
            let target = if self.source == self.sink {
                0.0
            } else if *node == source {
                seen_source = true;
                1.0
            } else if *node == sink {
                seen_sink = true;
                -1.0
            } else {
                0.0
            };
            let r = (out - target).abs();
            if r > worst.1 {
                worst = (node.clone(), r);
            }
        }
        if self.source != self.sink {
            if !seen_source && worst.1 < 1.0 {
                worst = (source, 1.0);
            }
            if !seen_sink && worst.1 < 1.0 {
                worst = (sink, 1.0);
            }
        }
        worst
    }

    pub fn check_conservation(&self, tolerance: f64) -> Result<()> {
        let (node, residual) = self.conservation_residual();
        if residual > tolerance {
            return Err(Error::ConservationViolation {
                node: node.to_string(),
                residual,
            });
        }
        Ok(())
    }
}

/// Turns a hat row (aggregate for the unipartite graph, arm-level for the
/// bipartite one) into a flow network and checks conservation at 1e-10.
pub fn flow_network(row: &LabeledRow, graph: &impl EdgeSet, source: &str, sink: &str) -> Result<FlowNetwork> {
    if row.col_labels != graph.edge_labels() {
        return Err(Error::DimensionMismatch(
            "hat row columns are not the graph's edges".into(),
        ));
    }
    let net = FlowNetwork::from_values(source, sink, &row.col_labels, &row.values, None)?;
    net.check_conservation(1e-10)?;
    Ok(net)
}
