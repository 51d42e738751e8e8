//! Transition matrices on the unipartite and bipartite graphs, and two ways of
//! counting expected net edge crossings of a walk from a source to a sink:
//! exactly through the absorbing chain, and by Monte Carlo.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphs::{BipartiteGraph, FlowNetwork, UnipartiteGraph};
use crate::linalg::{Label, LabeledMatrix};
use crate::rng::stream_rng;

/// A row-stochastic labeled matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub matrix: LabeledMatrix,
}

impl TransitionMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.matrix.values
    }

    /// Largest `|row sum - 1|`.
    pub fn stochasticity_error(&self) -> f64 {
        self.matrix
            .values
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn normalize_rows(values: &mut DMatrix<f64>, labels: &[Label], err: impl Fn(String) -> Error) -> Result<()> {
    for (i, mut row) in values.row_iter_mut().enumerate() {
        let s = row.sum();
        if !(s > 0.0) {
            return Err(err(labels[i].to_string()));
        }
        row /= s;
    }
    Ok(())
}

/// `T_jk = w_jk / sum_l w_jl`.
pub fn transition_unipartite(graph: &UnipartiteGraph) -> Result<TransitionMatrix> {
    let mut matrix = graph.adjacency();
    normalize_rows(&mut matrix.values, &matrix.row_labels, Error::IsolatedNode)?;
    Ok(TransitionMatrix { matrix })
}

/// Trial to treatment hops, `Λ_top⁻¹ B`.
pub fn transition_down(graph: &BipartiteGraph) -> Result<TransitionMatrix> {
    let mut matrix = graph.biadjacency();
    normalize_rows(&mut matrix.values, &matrix.row_labels, Error::IsolatedNode)?;
    Ok(TransitionMatrix { matrix })
}

/// Treatment to trial hops, `Λ_bottom⁻¹ B'`.
pub fn transition_up(graph: &BipartiteGraph) -> Result<TransitionMatrix> {
    let b = graph.biadjacency();
    let mut matrix = LabeledMatrix {
        row_labels: b.col_labels,
        col_labels: b.row_labels,
        values: b.values.transpose(),
    };
    normalize_rows(&mut matrix.values, &matrix.row_labels, Error::IsolatedNode)?;
    Ok(TransitionMatrix { matrix })
}

/// Treatment to treatment via a trial, `P = P_up P_down`.
pub fn two_step(up: &TransitionMatrix, down: &TransitionMatrix) -> Result<TransitionMatrix> {
    if up.matrix.col_labels != down.matrix.row_labels {
        return Err(Error::DimensionMismatch(
            "up-walk columns must be the down-walk rows".into(),
        ));
    }
    Ok(TransitionMatrix {
        matrix: LabeledMatrix::new(
            up.matrix.row_labels.clone(),
            down.matrix.col_labels.clone(),
            up.values() * down.values(),
        )?,
    })
}

/// Drops the probability of staying put and rescales each row.
pub fn renormalize(p: &TransitionMatrix) -> Result<TransitionMatrix> {
    let mut matrix = p.matrix.clone();
    for i in 0..matrix.nrows().min(matrix.ncols()) {
        matrix.values[(i, i)] = 0.0;
    }
    normalize_rows(&mut matrix.values, &matrix.row_labels, Error::AbsorbingRow)?;
    Ok(TransitionMatrix { matrix })
}

/// A Markov chain together with the oriented edges whose crossings are
/// counted.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkChain {
    pub states: Vec<Label>,
    pub p: DMatrix<f64>,
    /// `(a, b)` state pairs; a hop a -> b counts +1, b -> a counts -1.
    pub edges: Vec<(usize, usize)>,
    pub edge_labels: Vec<Label>,
}

impl WalkChain {
    pub fn unipartite(t: &TransitionMatrix, graph: &UnipartiteGraph) -> Result<Self> {
        if t.matrix.row_labels != graph.node_labels() {
            return Err(Error::DimensionMismatch(
                "transition matrix is not over the graph's nodes".into(),
            ));
        }
        Ok(Self {
            states: graph.node_labels(),
            p: t.values().clone(),
            edges: graph.edge_pairs(),
            edge_labels: graph.edge_labels(),
        })
    }

    /// One chain over trials then treatments: treatment rows hop up, trial
    /// rows hop down.
    pub fn bipartite(down: &TransitionMatrix, up: &TransitionMatrix, graph: &BipartiteGraph) -> Result<Self> {
        let (m, n) = (graph.n_trials(), graph.n_treatments());
        if down.values().shape() != (m, n) || up.values().shape() != (n, m) {
            return Err(Error::DimensionMismatch(
                "transition matrices do not match the graph".into(),
            ));
        }
        let mut p = DMatrix::zeros(m + n, m + n);
        p.view_mut((0, m), (m, n)).copy_from(down.values());
        p.view_mut((m, 0), (n, m)).copy_from(up.values());
        Ok(Self {
            states: graph.node_labels(),
            p,
            edges: graph.edges.iter().map(|e| (e.trial, m + e.treatment)).collect(),
            edge_labels: graph.edge_labels(),
        })
    }

    fn state(&self, name: &str) -> Result<usize> {
        let l = Label::treatment(name);
        self.states
            .iter()
            .position(|s| *s == l)
            .ok_or_else(|| Error::UnknownTreatment(name.to_string()))
    }

    fn reachable(&self, from: usize, to: usize) -> bool {
        let n = self.states.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for (v, s) in seen.iter_mut().enumerate() {
                if !*s && self.p[(u, v)] > 0.0 {
                    *s = true;
                    queue.push_back(v);
                }
            }
        }
        false
    }
}

/// Exact expected net crossings per edge via the fundamental matrix of the
/// chain absorbed at `sink`.
pub fn expected_net_crossings(chain: &WalkChain, source: &str, sink: &str) -> Result<FlowNetwork> {
    let (s, t) = (chain.state(source)?, chain.state(sink)?);
    let n = chain.states.len();
    if s == t {
        return FlowNetwork::from_values(source, sink, &chain.edge_labels, &vec![0.0; chain.edges.len()], None);
    }
    if !chain.reachable(s, t) {
        return Err(Error::SingularFundamentalMatrix {
            start: source.to_string(),
            sink: sink.to_string(),
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != t).collect();
    // visits' = e_s' (I - Q)⁻¹, i.e. (I - Q)' visits = e_s
    let a = DMatrix::from_fn(keep.len(), keep.len(), |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - chain.p[(keep[j], keep[i])]
    });
    let mut e = DVector::zeros(keep.len());
    e[keep.iter().position(|&i| i == s).expect("source is kept")] = 1.0;
    let v = a.lu().solve(&e).ok_or_else(|| Error::SingularFundamentalMatrix {
        start: source.to_string(),
        sink: sink.to_string(),
    })?;
    let mut visits = vec![0.0; n];
    for (i, &k) in keep.iter().enumerate() {
        visits[k] = v[i];
    }
    let values: Vec<f64> = chain
        .edges
        .iter()
        .map(|&(a, b)| visits[a] * chain.p[(a, b)] - visits[b] * chain.p[(b, a)])
        .collect();
    FlowNetwork::from_values(source, sink, &chain.edge_labels, &values, None)
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    pub walks: u64,
    pub seed: u64,
    /// Hops allowed per walk before giving up.
    pub step_cap: u64,
}

impl WalkConfig {
    pub fn new(walks: u64, seed: u64) -> Self {
        Self {
            walks,
            seed,
            step_cap: 1_000_000,
        }
    }
}

/// Walks are split into this many independently seeded chunks regardless of
/// the thread count.
const CHUNKS: u64 = 64;

struct Hop {
    cumulative: f64,
    to: usize,
    /// `(edge index, +1 | -1)` or none for hops outside the edge set.
    edge: Option<(usize, i64)>,
}

#[derive(Clone)]
struct Tally {
    sum: Vec<i64>,
    sum_sq: Vec<u64>,
}

/// Empirical mean net crossings with per-edge standard errors.
pub fn monte_carlo_crossings(chain: &WalkChain, source: &str, sink: &str, config: WalkConfig) -> Result<FlowNetwork> {
    if config.walks == 0 {
        return Err(Error::InvalidConfig("at least one walk is required".into()));
    }
    let (s, t) = (chain.state(source)?, chain.state(sink)?);
    let k = chain.edges.len();
    if s == t {
        let zeros = vec![0.0; k];
        return FlowNetwork::from_values(source, sink, &chain.edge_labels, &zeros, Some(&zeros));
    }
    if !chain.reachable(s, t) {
        return Err(Error::SingularFundamentalMatrix {
            start: source.to_string(),
            sink: sink.to_string(),
        });
    }

    let n = chain.states.len();
    let mut edge_of = std::collections::HashMap::new();
    for (i, &(a, b)) in chain.edges.iter().enumerate() {
        edge_of.insert((a, b), (i, 1i64));
        edge_of.insert((b, a), (i, -1i64));
    }
    let hops: Vec<Vec<Hop>> = (0..n)
        .map(|u| {
            let mut acc = 0.0;
            let mut out = Vec::new();
            for v in 0..n {
                let p = chain.p[(u, v)];
                if p > 0.0 {
                    acc += p;
                    out.push(Hop {
                        cumulative: acc,
                        to: v,
                        edge: edge_of.get(&(u, v)).copied(),
                    });
                }
            }
            out
        })
        .collect();

    let tallies: Vec<Result<Tally>> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let count = config.walks / CHUNKS + u64::from(c < config.walks % CHUNKS);
            let mut rng = stream_rng(config.seed, c);
            let mut tally = Tally {
                sum: vec![0; k],
                sum_sq: vec![0; k],
            };
            let mut walk = vec![0i64; k];
            let mut touched = Vec::new();
            for _ in 0..count {
                let mut state = s;
                let mut steps = 0u64;
                while state != t {
                    if steps == config.step_cap {
                        return Err(Error::WalkLimitExceeded(config.step_cap));
                    }
                    steps += 1;
                    let row = &hops[state];
                    let u: f64 = rng.gen::<f64>() * row.last().expect("rows are stochastic").cumulative;
                    let idx = row.partition_point(|h| h.cumulative <= u).min(row.len() - 1);
                    let hop = &row[idx];
                    if let Some((e, sign)) = hop.edge {
                        if walk[e] == 0 {
                            touched.push(e);
                        }
                        walk[e] += sign;
                    }
                    state = hop.to;
                }
                for e in touched.drain(..) {
                    let x = walk[e];
                    tally.sum[e] += x;
                    tally.sum_sq[e] += (x * x) as u64;
                    walk[e] = 0;
                }
            }
            Ok(tally)
        })
        .collect();

    let mut sum = vec![0i64; k];
    let mut sum_sq = vec![0u64; k];
    for tally in tallies {
        let tally = tally?;
        for e in 0..k {
            sum[e] += tally.sum[e];
            sum_sq[e] += tally.sum_sq[e];
        }
    }
    let w = config.walks as f64;
    let means: Vec<f64> = sum.iter().map(|&x| x as f64 / w).collect();
    let errors: Vec<f64> = (0..k)
        .map(|e| {
            if config.walks < 2 {
                return 0.0;
            }
            let var = (sum_sq[e] as f64 - w * means[e] * means[e]) / (w - 1.0);
            (var.max(0.0) / w).sqrt()
        })
        .collect();
    FlowNetwork::from_values(source, sink, &chain.edge_labels, &means, Some(&errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ArmRecord, ModelSpec, NmaDataset};
    use crate::fixtures;
    use crate::graphs::bipartite_from_dataset;
    use crate::hat::{direct_evidence, expand_consistency, HatMatrices};

    fn graphs(d: &NmaDataset) -> (UnipartiteGraph, BipartiteGraph) {
        let spec = ModelSpec::common_effect();
        let e = direct_evidence(d, &spec).unwrap();
        (UnipartiteGraph::from_evidence(&e), bipartite_from_dataset(d, &spec))
    }

    fn two_arm() -> NmaDataset {
        NmaDataset::from_records(vec![
            ArmRecord::new("s", "a", 0.0, 0.5),
            ArmRecord::new("s", "b", 0.0, 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn trivial_transition_matrices() {
        let (ug, bg) = graphs(&two_arm());
        let t = transition_unipartite(&ug).unwrap();
        assert_eq!(t.values(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let p = two_step(&transition_up(&bg).unwrap(), &transition_down(&bg).unwrap()).unwrap();
        assert_eq!(p.values(), &DMatrix::from_element(2, 2, 0.5));
        assert_eq!(renormalize(&p).unwrap().values(), t.values());
    }

    #[test]
    fn fictional_down_walk_from_trial_one() {
        let (_, bg) = graphs(&fixtures::fictional());
        let down = transition_down(&bg).unwrap();
        assert!((down.values()[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((down.values()[(0, 1)] - 0.4).abs() < 1e-12);
        let p = two_step(&transition_up(&bg).unwrap(), &down).unwrap();
        assert!(p.stochasticity_error() < 1e-12);
        assert!((0..4).all(|j| p.values()[(j, j)] > 0.0));
    }

    #[test]
    fn absorbing_rows_are_rejected() {
        let m = LabeledMatrix::new(
            vec![Label::treatment("a"), Label::treatment("b")],
            vec![Label::treatment("a"), Label::treatment("b")],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]),
        )
        .unwrap();
        assert!(matches!(
            renormalize(&TransitionMatrix { matrix: m }),
            Err(Error::AbsorbingRow(_))
        ));
    }

    #[test]
    fn absorbing_chain_reproduces_the_aggregate_row() {
        let d = fixtures::fictional();
        let (ug, _) = graphs(&d);
        let hats = HatMatrices::compute(&d, &ModelSpec::common_effect()).unwrap();
        let chain = WalkChain::unipartite(&transition_unipartite(&ug).unwrap(), &ug).unwrap();
        for (from, to) in [("a", "b"), ("c", "a"), ("b", "d")] {
            let row = expand_consistency(&hats.aggregate, from, to).unwrap();
            let net = expected_net_crossings(&chain, from, to).unwrap();
            for (x, y) in net.values().iter().zip(&row.values) {
                assert!((x - y).abs() < 1e-10, "{from}->{to}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn bipartite_chain_reproduces_the_arm_row() {
        let d = fixtures::fictional();
        let (_, bg) = graphs(&d);
        let hats = HatMatrices::compute(&d, &ModelSpec::common_effect()).unwrap();
        let chain = WalkChain::bipartite(&transition_down(&bg).unwrap(), &transition_up(&bg).unwrap(), &bg).unwrap();
        let row = expand_consistency(&hats.arm_level, "a", "b").unwrap();
        let net = expected_net_crossings(&chain, "a", "b").unwrap();
        for (x, y) in net.values().iter().zip(&row.values) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn single_edge_walks_cross_once() {
        let (ug, _) = graphs(&two_arm());
        let chain = WalkChain::unipartite(&transition_unipartite(&ug).unwrap(), &ug).unwrap();
        assert_eq!(expected_net_crossings(&chain, "a", "b").unwrap().values(), vec![1.0]);
        let mc = monte_carlo_crossings(&chain, "a", "b", WalkConfig::new(100, 3)).unwrap();
        assert_eq!(mc.values(), vec![1.0]);
        assert_eq!(mc.flows[0].std_error, Some(0.0));
    }

    #[test]
    fn monte_carlo_is_deterministic_and_close() {
        let d = fixtures::fictional();
        let (ug, _) = graphs(&d);
        let chain = WalkChain::unipartite(&transition_unipartite(&ug).unwrap(), &ug).unwrap();
        let a = monte_carlo_crossings(&chain, "a", "b", WalkConfig::new(20_000, 11)).unwrap();
        let b = monte_carlo_crossings(&chain, "a", "b", WalkConfig::new(20_000, 11)).unwrap();
        assert_eq!(a, b);
        let exact = expected_net_crossings(&chain, "a", "b").unwrap();
        for (m, x) in a.flows.iter().zip(exact.values()) {
            assert!((m.value - x).abs() < 5.0 * m.std_error.unwrap() + 1e-12);
        }
    }

    #[test]
    fn step_cap_is_an_error() {
        let d = fixtures::fictional();
        let (ug, _) = graphs(&d);
        let chain = WalkChain::unipartite(&transition_unipartite(&ug).unwrap(), &ug).unwrap();
        let config = WalkConfig {
            walks: 1000,
            seed: 1,
            step_cap: 1,
        };
        assert!(matches!(
            monte_carlo_crossings(&chain, "a", "d", config),
            Err(Error::WalkLimitExceeded(1))
        ));
    }

    #[test]
    fn unreachable_sink_is_reported() {
        let labels = vec![Label::treatment("a"), Label::treatment("b"), Label::treatment("c")];
        let chain = WalkChain {
            states: labels,
            p: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            edges: vec![(0, 1)],
            edge_labels: vec![Label::edge("a", "b")],
        };
        assert!(matches!(
            expected_net_crossings(&chain, "a", "c"),
            Err(Error::SingularFundamentalMatrix { .. })
        ));
    }
}
