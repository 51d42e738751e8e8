//! Random trial-treatment networks and the batch simulation that checks both
//! matrix identities on each of them.
//!
//! A network is drawn as a uniform bipartite graph with a fixed number of
//! arms, then repaired so that every trial has two arms and the graph is
//! connected. Arm variances are half-normal with a per-network scale.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ArmRecord, ModelSpec, NmaDataset};
use crate::error::{Error, Result};
use crate::graphs::{bipartite_from_dataset, BipartiteMetrics, UnipartiteGraph, UnipartiteMetrics};
use crate::hat::direct_evidence;
use crate::rng::stream_rng;
use crate::verify::{verify_arm_hat_currents, verify_two_step_walk, VerificationReport, DEFAULT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_networks: usize,
    /// Inclusive range of the number of treatments.
    pub n_treatments: (usize, usize),
    /// Inclusive range of the number of trials.
    pub n_trials: (usize, usize),
    /// Range of the per-network half-normal scale of arm variances.
    pub variance_scale: (f64, f64),
    pub seed: u64,
    pub tolerance: f64,
    /// Record wall-clock times in the reports; off keeps output reproducible.
    pub record_timings: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_networks: 1000,
            n_treatments: (3, 50),
            n_trials: (2, 200),
            variance_scale: (0.5, 2.0),
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            record_timings: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let (n0, n1) = self.n_treatments;
        let (m0, m1) = self.n_trials;
        let (s0, s1) = self.variance_scale;
        if n0 > n1 || m0 > m1 || !(s0 <= s1) {
            return Err(Error::InvalidConfig("ranges must be nonempty".into()));
        }
        if n0 < 2 {
            return Err(Error::InvalidConfig("at least two treatments are required".into()));
        }
        if m0 < 1 {
            return Err(Error::InvalidConfig("at least one trial is required".into()));
        }
        if !(s0 > 0.0) || !s1.is_finite() {
            return Err(Error::InvalidConfig(
                "variance scales must be positive and finite".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Trial-major adjacency: `arms[i]` holds the treatments of trial i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomBipartite {
    pub n_treatments: usize,
    pub arms: Vec<BTreeSet<usize>>,
}

impl RandomBipartite {
    pub fn n_trials(&self) -> usize {
        self.arms.len()
    }

    pub fn n_edges(&self) -> usize {
        self.arms.iter().map(BTreeSet::len).sum()
    }

    /// Connected components over trials `0..M` and treatments `M..M+N`.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let m = self.n_trials();
        let n = m + self.n_treatments;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, ts) in self.arms.iter().enumerate() {
            for &t in ts {
                let (a, b) = (find(&mut parent, i), find(&mut parent, m + t));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(v);
        }
        groups
    }
}

/// `k` distinct trial-treatment pairs chosen uniformly.
pub fn uniform_bipartite(n_treatments: usize, n_trials: usize, k: usize, rng: &mut impl Rng) -> RandomBipartite {
    let mut arms = vec![BTreeSet::new(); n_trials];
    for idx in sample(rng, n_treatments * n_trials, k) {
        arms[idx / n_treatments].insert(idx % n_treatments);
    }
    RandomBipartite { n_treatments, arms }
}

/// Arm count `2M + |Z|`, `Z ~ Normal(0, (NM - 2M) / 2)`, rounded and redrawn
/// until it is at most `NM`.
pub fn sample_arm_count(n_treatments: usize, n_trials: usize, rng: &mut impl Rng) -> usize {
    let (lo, hi) = (2 * n_trials, n_treatments * n_trials);
    if hi <= lo {
        return hi;
    }
    let normal = Normal::new(0.0, (hi - lo) as f64 / 2.0).expect("finite positive sd");
    loop {
        let k = lo + normal.sample(rng).abs().round() as usize;
        if k <= hi {
            return k;
        }
    }
}

/// Trials with no arms get two random treatments, trials with one arm get
/// one more.
pub fn repair_min_degree(graph: &mut RandomBipartite, rng: &mut impl Rng) {
    let n = graph.n_treatments;
    for ts in &mut graph.arms {
        match ts.len() {
            0 => {
                for t in sample(rng, n, 2) {
                    ts.insert(t);
                }
            }
            1 => {
                let have = *ts.iter().next().expect("one arm");
                let mut t = rng.gen_range(0..n - 1);
                if t >= have {
                    t += 1;
                }
                ts.insert(t);
            }
            _ => {}
        }
    }
}

/// Joins components until the graph is connected and returns the number of
/// merge steps.
///
/// Each step picks two components and a treatment in each, then links a
/// trial of one treatment to the other treatment; if neither treatment is in
/// any trial, a random trial is linked to both.
pub fn repair_connectivity(graph: &mut RandomBipartite, rng: &mut impl Rng) -> usize {
    let m = graph.n_trials();
    let mut steps = 0;
    loop {
        let comps = graph.components();
        if comps.len() <= 1 {
            return steps;
        }
        let pick = sample(rng, comps.len(), 2);
        let mut bottom = |c: &Vec<usize>| {
            let ts: Vec<usize> = c.iter().filter(|&&v| v >= m).map(|&v| v - m).collect();
            ts[rng.gen_range(0..ts.len())]
        };
        let vj = bottom(&comps[pick.index(0)]);
        let vk = bottom(&comps[pick.index(1)]);
        // (trial, treatment to add)
        let mut candidates = Vec::new();
        for (i, ts) in graph.arms.iter().enumerate() {
            if ts.contains(&vj) {
                candidates.push((i, vk));
            } else if ts.contains(&vk) {
                candidates.push((i, vj));
            }
        }
        if candidates.is_empty() {
            let i = rng.gen_range(0..m);
            graph.arms[i].insert(vj);
            graph.arms[i].insert(vk);
        } else {
            let (i, t) = candidates[rng.gen_range(0..candidates.len())];
            graph.arms[i].insert(t);
        }
        steps += 1;
    }
}

/// A generated network together with the arm count drawn before repair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNetwork {
    pub dataset: NmaDataset,
    pub sampled_arms: usize,
    pub variance_scale: f64,
}

fn padded(prefix: char, i: usize, count: usize) -> String {
    let width = count.to_string().len();
    format!("{prefix}{:0width$}", i + 1)
}

pub fn sample_network(config: &SimConfig, rng: &mut impl Rng) -> Result<SampledNetwork> {
    let n = rng.gen_range(config.n_treatments.0..=config.n_treatments.1);
    let m = rng.gen_range(config.n_trials.0..=config.n_trials.1);
    let k = sample_arm_count(n, m, rng);
    let mut graph = uniform_bipartite(n, m, k, rng);
    repair_min_degree(&mut graph, rng);
    repair_connectivity(&mut graph, rng);

    let (s0, s1) = config.variance_scale;
    let s = if s0 == s1 { s0 } else { rng.gen_range(s0..s1) };
    let half_normal = Normal::new(0.0, s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut records = Vec::with_capacity(graph.n_edges());
    for (i, ts) in graph.arms.iter().enumerate() {
        for &t in ts {
            let variance = loop {
                let v: f64 = half_normal.sample(rng).abs();
                if v > 0.0 {
                    break v;
                }
            };
            let mean: f64 = rng.sample(rand_distr::StandardNormal);
            records.push(ArmRecord::new(padded('s', i, m), padded('t', t, n), mean, variance));
        }
    }
    Ok(SampledNetwork {
        dataset: NmaDataset::from_records(records)?,
        sampled_arms: k,
        variance_scale: s,
    })
}

/// One simulated network's checks and structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub index: usize,
    pub treatments: usize,
    pub trials: usize,
    pub sampled_arms: usize,
    pub variance_scale: f64,
    pub arm_hat_currents: VerificationReport,
    pub two_step_walk: VerificationReport,
    pub bipartite: BipartiteMetrics,
    pub unipartite: UnipartiteMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl NetworkRecord {
    pub fn pass(&self) -> bool {
        self.arm_hat_currents.pass && self.two_step_walk.pass
    }
}

pub fn simulate_network(config: &SimConfig, index: usize) -> Result<NetworkRecord> {
    let mut rng = stream_rng(config.seed, index as u64);
    let net = sample_network(config, &mut rng)?;
    let d = &net.dataset;
    let spec = ModelSpec::common_effect();
    let mut error = None;
    let mut failed = |name: &str, e: Error| {
        error = Some(e.to_string());
        VerificationReport::new(name, f64::INFINITY, config.tolerance, [0, 0])
    };
    let mut c1 =
        verify_arm_hat_currents(d, &spec, config.tolerance).unwrap_or_else(|e| failed("arm_hat_vs_edge_currents", e));
    let mut c2 =
        verify_two_step_walk(d, &spec, config.tolerance).unwrap_or_else(|e| failed("transition_vs_two_step_walk", e));
    if !config.record_timings {
        c1.elapsed_ms = 0.0;
        c2.elapsed_ms = 0.0;
    }
    let bipartite = bipartite_from_dataset(d, &spec).metrics();
    let unipartite = UnipartiteGraph::from_evidence(&direct_evidence(d, &spec)?).metrics();
    Ok(NetworkRecord {
        index,
        treatments: d.n_treatments(),
        trials: d.n_trials(),
        sampled_arms: net.sampled_arms,
        variance_scale: net.variance_scale,
        arm_hat_currents: c1,
        two_step_walk: c2,
        bipartite,
        unipartite,
        error,
    })
}

/// Mean, sample SD, minimum and maximum of one metric across networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricSummary {
    fn of(metric: &str, xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self {
                metric: metric.into(),
                mean: f64::NAN,
                sd: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            metric: metric.into(),
            mean,
            sd,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Column names and values of the per-network structural metrics.
pub fn metric_columns(r: &NetworkRecord) -> Vec<(&'static str, f64)> {
    let (b, u) = (&r.bipartite, &r.unipartite);
    vec![
        ("treatments", b.treatments as f64),
        ("trials", b.trials as f64),
        ("bipartite_edges", b.edges as f64),
        ("unipartite_edges", u.edges as f64),
        ("trial_degree_mean", b.trial_degree.mean),
        ("trial_degree_min", b.trial_degree.min as f64),
        ("trial_degree_max", b.trial_degree.max as f64),
        ("treatment_degree_mean", b.treatment_degree.mean),
        ("treatment_degree_min", b.treatment_degree.min as f64),
        ("treatment_degree_max", b.treatment_degree.max as f64),
        ("unipartite_degree_mean", u.degree.mean),
        ("unipartite_degree_min", u.degree.min as f64),
        ("unipartite_degree_max", u.degree.max as f64),
        ("bipartite_density", b.density),
        ("unipartite_density", u.density),
        ("unipartite_radius", u.radius as f64),
        ("unipartite_mean_distance", u.mean_distance),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub networks: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub arm_hat_currents_pass: usize,
    pub arm_hat_currents_max_diff: f64,
    pub two_step_walk_pass: usize,
    pub two_step_walk_max_diff: f64,
    pub all_pass: bool,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub records: Vec<NetworkRecord>,
    pub summary: SimulationSummary,
}

impl SimulationReport {
    /// Per-network metrics as CSV, one row per network.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index"];
        if let Some(r) = self.records.first() {
            header.extend(metric_columns(r).iter().map(|(k, _)| *k));
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.index.to_string()];
            row.extend(metric_columns(r).iter().map(|(_, v)| v.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn summarize(config: &SimConfig, records: &[NetworkRecord]) -> SimulationSummary {
    let max = |f: fn(&NetworkRecord) -> f64| {
        records
            .iter()
            .map(f)
            .fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) })
    };
    let c1_pass = records.iter().filter(|r| r.arm_hat_currents.pass).count();
    let c2_pass = records.iter().filter(|r| r.two_step_walk.pass).count();
    let metrics = match records.first() {
        None => Vec::new(),
        Some(first) => metric_columns(first)
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let xs: Vec<f64> = records.iter().map(|r| metric_columns(r)[i].1).collect();
                MetricSummary::of(name, &xs)
            })
            .collect(),
    };
    SimulationSummary {
        networks: records.len(),
        seed: config.seed,
        tolerance: config.tolerance,
        arm_hat_currents_pass: c1_pass,
        arm_hat_currents_max_diff: max(|r| r.arm_hat_currents.max_abs_diff),
        two_step_walk_pass: c2_pass,
        two_step_walk_max_diff: max(|r| r.two_step_walk.max_abs_diff),
        all_pass: c1_pass == records.len() && c2_pass == records.len(),
        metrics,
    }
}

/// Generates and checks `n_networks` networks in parallel. The result
/// depends only on the configuration.
pub fn run_simulation(config: &SimConfig) -> Result<SimulationReport> {
    config.validate()?;
    let records = (0..config.n_networks)
        .into_par_iter()
        .map(|i| simulate_network(config, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(config, &records);
    Ok(SimulationReport { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_networks: 12,
            n_treatments: (3, 8),
            n_trials: (2, 12),
            seed: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = small();
        let a = sample_network(&c, &mut stream_rng(9, 0)).unwrap();
        let b = sample_network(&c, &mut stream_rng(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tightest_config_is_repaired() {
        let c = SimConfig {
            n_treatments: (3, 3),
            n_trials: (2, 2),
            ..SimConfig::default()
        };
        for seed in 0..50 {
            let net = sample_network(&c, &mut stream_rng(seed, 0)).unwrap();
            let d = &net.dataset;
            assert!(d.trial_ids().all(|t| d.trial_arms(t).len() >= 2));
            assert!(net.sampled_arms >= 4 && net.sampled_arms <= 6);
        }
    }

    #[test]
    fn min_degree_repair_adds_exactly_what_is_missing() {
        let mut rng = stream_rng(1, 1);
        let mut g = RandomBipartite {
            n_treatments: 5,
            arms: vec![BTreeSet::new(), BTreeSet::from([3]), BTreeSet::from([0, 1, 2])],
        };
        repair_min_degree(&mut g, &mut rng);
        assert_eq!(g.arms[0].len(), 2);
        assert_eq!(g.arms[1].len(), 2);
        assert!(g.arms[1].contains(&3));
        assert_eq!(g.arms[2], BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn connectivity_repair_merges_one_pair_per_step() {
        let mut rng = stream_rng(2, 0);
        // ten two-arm trials on disjoint treatment pairs
        let mut g = RandomBipartite {
            n_treatments: 20,
            arms: (0..10).map(|i| BTreeSet::from([2 * i, 2 * i + 1])).collect(),
        };
        assert_eq!(g.components().len(), 10);
        let steps = repair_connectivity(&mut g, &mut rng);
        assert!(steps <= 9);
        assert_eq!(g.components().len(), 1);

        let mut connected = g.clone();
        assert_eq!(repair_connectivity(&mut connected, &mut rng), 0);
        assert_eq!(connected, g);
    }

    #[test]
    fn isolated_treatments_are_attached() {
        let mut rng = stream_rng(3, 0);
        let mut g = RandomBipartite {
            n_treatments: 6,
            arms: vec![BTreeSet::from([0, 1]), BTreeSet::from([0, 2])],
        };
        repair_connectivity(&mut g, &mut rng);
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn batch_passes_and_is_order_independent() {
        let c = small();
        let a = run_simulation(&c).unwrap();
        assert!(a.summary.all_pass, "{:?}", a.summary);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_simulation(&c)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 12);
        assert!(a.metrics_csv().unwrap().lines().count() == 13);
    }

    #[test]
    fn empty_batch() {
        let c = SimConfig {
            n_networks: 0,
            ..SimConfig::default()
        };
        let r = run_simulation(&c).unwrap();
        assert!(r.records.is_empty());
        assert!(r.summary.all_pass);
        assert!(r.summary.metrics.is_empty());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SimConfig {
                n_treatments: (1, 4),
                ..SimConfig::default()
            },
            SimConfig {
                n_trials: (5, 4),
                ..SimConfig::default()
            },
            SimConfig {
                variance_scale: (0.0, 1.0),
                ..SimConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(run_simulation(&c), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn names_sort_numerically() {
        assert_eq!(padded('t', 0, 12), "t01");
        assert!(padded('s', 9, 120) > padded('s', 8, 120));
        assert_eq!(padded('s', 119, 120), "s120");
    }
}
