//! Browser bindings. Every export takes plain strings and numbers and returns
//! a JSON string; the logic lives in ordinary functions so it can be tested
//! natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use evflow_core::dot::{bipartite_dot, flow_dot};
use evflow_core::graphs::{bipartite_from_dataset, flow_network};
use evflow_core::hat::{direct_evidence, expand_consistency, HatMatrices};
use evflow_core::linalg::MatrixTable;
use evflow_core::randomwalk::{renormalize, transition_down, transition_unipartite, transition_up, two_step};
use evflow_core::rng::stream_rng;
use evflow_core::simgen::{sample_network, SimConfig};
use evflow_core::verify::{verify_all, VerificationReport, DEFAULT_TOLERANCE};
use evflow_core::{fixtures, parse_arm_csv, FlowNetwork, LoadOptions, ModelSpec, NmaDataset, UnipartiteGraph};

type Result<T> = std::result::Result<T, String>;

fn load(csv: &str, tau: f64) -> Result<(NmaDataset, ModelSpec)> {
    let ds = parse_arm_csv(
        csv.as_bytes(),
        LoadOptions {
            continuity_correction: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let spec = ModelSpec::from_tau(tau).map_err(|e| e.to_string())?;
    Ok((ds, spec))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[derive(Serialize)]
struct FlowView {
    treatments: Vec<String>,
    network: FlowNetwork,
    dot: String,
}

pub fn flow_json(csv: &str, from: &str, to: &str, graph: &str, tau: f64) -> Result<String> {
    let (ds, spec) = load(csv, tau)?;
    let hats = HatMatrices::compute(&ds, &spec).map_err(|e| e.to_string())?;
    let network = match graph {
        "uni" => {
            let ug = UnipartiteGraph::from_evidence(&direct_evidence(&ds, &spec).map_err(|e| e.to_string())?);
            let row = expand_consistency(&hats.aggregate, from, to).map_err(|e| e.to_string())?;
            flow_network(&row, &ug, from, to)
        }
        "bi" => {
            let bg = bipartite_from_dataset(&ds, &spec);
            let row = expand_consistency(&hats.arm_level, from, to).map_err(|e| e.to_string())?;
            flow_network(&row, &bg, from, to)
        }
        other => return Err(format!("unknown graph kind `{other}`; use uni or bi")),
    }
    .map_err(|e| e.to_string())?;
    Ok(json(&FlowView {
        treatments: ds.treatments().to_vec(),
        dot: flow_dot(&network),
        network,
    }))
}

#[derive(Serialize)]
struct Named {
    name: &'static str,
    #[serde(flatten)]
    table: MatrixTable,
}

#[derive(Serialize)]
struct TransitionView {
    matrices: Vec<Named>,
    checks: Vec<VerificationReport>,
}

pub fn transitions_json(csv: &str, tau: f64) -> Result<String> {
    let (ds, spec) = load(csv, tau)?;
    let err = |e: evflow_core::Error| e.to_string();
    let ug = UnipartiteGraph::from_evidence(&direct_evidence(&ds, &spec).map_err(err)?);
    let bg = bipartite_from_dataset(&ds, &spec);
    let t = transition_unipartite(&ug).map_err(err)?;
    let down = transition_down(&bg).map_err(err)?;
    let up = transition_up(&bg).map_err(err)?;
    let p = two_step(&up, &down).map_err(err)?;
    let pt = renormalize(&p).map_err(err)?;
    let matrices = [("T", &t), ("Pdown", &down), ("Pup", &up), ("P", &p), ("Ptilde", &pt)]
        .into_iter()
        .map(|(name, m)| Named {
            name,
            table: m.matrix.table(),
        })
        .collect();
    let checks = verify_all(&ds, &spec, DEFAULT_TOLERANCE).map_err(err)?;
    Ok(json(&TransitionView { matrices, checks }))
}

#[derive(Serialize)]
struct RandomView {
    treatments: usize,
    trials: usize,
    arms: usize,
    csv: String,
    dot: String,
    checks: Vec<VerificationReport>,
}

pub fn random_network_json(seed: u64, max_treatments: usize, max_trials: usize) -> Result<String> {
    let config = SimConfig {
        n_treatments: (3, max_treatments.max(3)),
        n_trials: (2, max_trials.max(2)),
        seed,
        ..SimConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let ds = sample_network(&config, &mut stream_rng(seed, 0))
        .map_err(|e| e.to_string())?
        .dataset;
    let spec = ModelSpec::common_effect();
    let mut csv = String::from("study,treatment,mean,variance\n");
    for r in ds.records() {
        csv.push_str(&format!("{},{},{},{}\n", r.study, r.treatment, r.mean, r.variance));
    }
    let mut checks = verify_all(&ds, &spec, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    for c in &mut checks {
        c.elapsed_ms = 0.0;
    }
    Ok(json(&RandomView {
        treatments: ds.n_treatments(),
        trials: ds.n_trials(),
        arms: ds.n_arms(),
        dot: bipartite_dot(&bipartite_from_dataset(&ds, &spec)),
        csv,
        checks,
    }))
}

/// Evidence flow of `from -> to` on the `uni` or `bi` graph.
#[wasm_bindgen(js_name = flowNetwork)]
pub fn flow_network_js(csv: &str, from: &str, to: &str, graph: &str, tau: f64) -> std::result::Result<String, JsError> {
    flow_json(csv, from, to, graph, tau).map_err(|e| JsError::new(&e))
}

/// Walk transition matrices and all identity checks.
#[wasm_bindgen(js_name = transitionMatrices)]
pub fn transition_matrices_js(csv: &str, tau: f64) -> std::result::Result<String, JsError> {
    transitions_json(csv, tau).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = randomNetwork)]
pub fn random_network_js(seed: u32, max_treatments: u32, max_trials: u32) -> std::result::Result<String, JsError> {
    random_network_json(seed as u64, max_treatments as usize, max_trials as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleData)]
pub fn sample_data(name: &str) -> String {
    match name {
        "psoriasis" => fixtures::PSORIASIS_CSV.to_string(),
        _ => fixtures::FICTIONAL_CSV.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn flow_on_both_graphs() {
        let v: Value =
            serde_json::from_str(&flow_json(fixtures::FICTIONAL_CSV, "a", "b", "uni", 0.0).unwrap()).unwrap();
        assert_eq!(v["network"]["flows"].as_array().unwrap().len(), 6);
        assert!(v["dot"].as_str().unwrap().starts_with("digraph"));
        let v: Value =
            serde_json::from_str(&flow_json(fixtures::PSORIASIS_CSV, "IXE_Q2W", "SEC_300", "bi", 0.0).unwrap())
                .unwrap();
        assert_eq!(v["network"]["flows"].as_array().unwrap().len(), 28);
        assert!(flow_json(fixtures::FICTIONAL_CSV, "a", "q", "uni", 0.0).is_err());
        assert!(flow_json(fixtures::FICTIONAL_CSV, "a", "b", "tri", 0.0).is_err());
    }

    #[test]
    fn transitions_and_checks() {
        let v: Value = serde_json::from_str(&transitions_json(fixtures::PSORIASIS_CSV, 0.1).unwrap()).unwrap();
        assert_eq!(v["matrices"].as_array().unwrap().len(), 5);
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    }

    #[test]
    fn random_network_round_trips_through_csv() {
        let a = random_network_json(7, 8, 10).unwrap();
        assert_eq!(a, random_network_json(7, 8, 10).unwrap());
        let v: Value = serde_json::from_str(&a).unwrap();
        let csv = v["csv"].as_str().unwrap();
        let (ds, _) = load(csv, 0.0).unwrap();
        assert_eq!(ds.n_arms() as u64, v["arms"].as_u64().unwrap());
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    }
}
