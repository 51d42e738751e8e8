use evflow_core::dataset::{ModelSpec, NmaDataset};
use evflow_core::graphs::{bipartite_from_dataset, FlowNetwork, UnipartiteGraph};
use evflow_core::hat::{
    adjust_multiarm_weights, direct_evidence, estimate_all, expand_consistency, trial_pair_variances, HatMatrices,
};
use evflow_core::randomwalk::{
    expected_net_crossings, renormalize, transition_down, transition_unipartite, transition_up, two_step, WalkChain,
};
use evflow_core::rng::stream_rng;
use evflow_core::simgen::{sample_network, SimConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn network(seed: u64) -> NmaDataset {
    let config = SimConfig {
        n_treatments: (3, 12),
        n_trials: (2, 24),
        ..SimConfig::default()
    };
    sample_network(&config, &mut stream_rng(seed, 0)).unwrap().dataset
}

fn pair(d: &NmaDataset, a: usize, b: usize) -> (String, String) {
    let n = d.n_treatments();
    let i = a % n;
    let j = (i + 1 + b % (n - 1)) % n;
    (d.treatments()[i].clone(), d.treatments()[j].clone())
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Star-mesh (Kron) reduction of a star with arm conductances `b`.
fn star_mesh(b: &[f64]) -> DMatrix<f64> {
    let total: f64 = b.iter().sum();
    DMatrix::from_fn(b.len(), b.len(), |j, k| if j == k { 0.0 } else { b[j] * b[k] / total })
}

fn effective_resistances(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = w.row(i).sum();
    }
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let lp = (&l + &j).try_inverse().unwrap() - j;
    DMatrix::from_fn(n, n, |a, b| lp[(a, a)] + lp[(b, b)] - 2.0 * lp[(a, b)])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn estimates_agree_across_formulations(seed in any::<u64>(), tau in prop_oneof![Just(0.0), 0.0..1.5f64]) {
        let d = network(seed);
        let e = estimate_all(&d, &ModelSpec::from_tau(tau).unwrap()).unwrap();
        prop_assert!(e.max_abs_diff() < 1e-10, "{}", e.max_abs_diff());
    }

    #[test]
    fn flows_conserve(seed in any::<u64>(), tau in 0.0..1.0f64, picks in prop::collection::vec((any::<usize>(), any::<usize>()), 5)) {
        let d = network(seed);
        let hats = HatMatrices::compute(&d, &ModelSpec::from_tau(tau).unwrap()).unwrap();
        for (a, b) in picks {
            let (from, to) = pair(&d, a, b);
            for hat in [&hats.aggregate, &hats.arm_level] {
                let row = expand_consistency(hat, &from, &to).unwrap();
                let net = FlowNetwork::from_values(&from, &to, &row.col_labels, &row.values, None).unwrap();
                let (node, r) = net.conservation_residual();
                prop_assert!(r < 1e-10, "{from}->{to} at {node:?}: {r}");
            }
        }
    }

    #[test]
    fn transitions_are_stochastic(seed in any::<u64>(), tau in 0.0..1.0f64) {
        let d = network(seed);
        let spec = ModelSpec::from_tau(tau).unwrap();
        let ug = UnipartiteGraph::from_evidence(&direct_evidence(&d, &spec).unwrap());
        let bg = bipartite_from_dataset(&d, &spec);
        let t = transition_unipartite(&ug).unwrap();
        let down = transition_down(&bg).unwrap();
        let up = transition_up(&bg).unwrap();
        let p = two_step(&up, &down).unwrap();
        let pt = renormalize(&p).unwrap();
        for m in [&t, &down, &up, &p, &pt] {
            prop_assert!(m.stochasticity_error() < 1e-12);
            prop_assert!(m.values().iter().all(|x| *x >= 0.0));
        }
        prop_assert!(pt.values().diagonal().iter().all(|x| *x == 0.0));
        prop_assert!((pt.values() - t.values()).abs().max() < 1e-10);
    }

    #[test]
    fn multiarm_weights_reproduce_resistances(vars in prop::collection::vec(0.01..5.0f64, 2..9), tau in 0.0..1.5f64) {
        let tau2 = tau * tau;
        let v = trial_pair_variances(&vars, tau2);
        let w = adjust_multiarm_weights(&v).unwrap();
        let r = effective_resistances(&w);
        let n = vars.len();
        for a in 0..n {
            for b in (a + 1)..n {
                prop_assert!((r[(a, b)] - v[(a, b)]).abs() < 1e-10 * v.max().max(1.0));
            }
        }
        let b: Vec<f64> = vars.iter().map(|s| 1.0 / (s + tau2 / 2.0)).collect();
        prop_assert!((&w - star_mesh(&b)).abs().max() < 1e-10 * w.max().max(1.0));
    }

    #[test]
    fn absorbing_walks_match_hat_rows(seed in any::<u64>(), tau in 0.0..1.0f64, a in any::<usize>(), b in any::<usize>()) {
        let d = network(seed);
        let spec = ModelSpec::from_tau(tau).unwrap();
        let (from, to) = pair(&d, a, b);
        let hats = HatMatrices::compute(&d, &spec).unwrap();

        let ug = UnipartiteGraph::from_evidence(&direct_evidence(&d, &spec).unwrap());
        let uni = WalkChain::unipartite(&transition_unipartite(&ug).unwrap(), &ug).unwrap();
        let row = expand_consistency(&hats.aggregate, &from, &to).unwrap();
        let walk = expected_net_crossings(&uni, &from, &to).unwrap();
        prop_assert!(max_dev(&walk.values(), &row.values) < 1e-10);

        let bg = bipartite_from_dataset(&d, &spec);
        let bi = WalkChain::bipartite(&transition_down(&bg).unwrap(), &transition_up(&bg).unwrap(), &bg).unwrap();
        let row = expand_consistency(&hats.arm_level, &from, &to).unwrap();
        let walk = expected_net_crossings(&bi, &from, &to).unwrap();
        prop_assert!(max_dev(&walk.values(), &row.values) < 1e-10);
    }

    #[test]
    fn input_order_is_irrelevant(seed in any::<u64>(), tau in 0.0..1.0f64) {
        let d = network(seed);
        let mut recs = d.records();
        recs.reverse();
        let shuffled = NmaDataset::from_records(recs).unwrap();
        let spec = ModelSpec::from_tau(tau).unwrap();
        let a = HatMatrices::compute(&d, &spec).unwrap();
        let b = HatMatrices::compute(&shuffled, &spec).unwrap();
        prop_assert_eq!(a.aggregate, b.aggregate);
        prop_assert_eq!(a.arm_level, b.arm_level);
    }
}
