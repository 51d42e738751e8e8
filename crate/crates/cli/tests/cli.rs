use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evflow_core::fixtures;
use evflow_core::hat::{expand_consistency, HatMatrices};
use evflow_core::ModelSpec;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn evflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evflow"))
        .args(args)
        .output()
        .expect("run evflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn temp_csv(name: &str, body: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("evflow-{}-{name}.csv", std::process::id()));
    std::fs::write(&path, body).unwrap();
    path
}

fn psoriasis() -> String {
    data("psoriasis_pasi75.csv").to_string_lossy().into_owned()
}

fn fictional() -> String {
    data("fictional.csv").to_string_lossy().into_owned()
}

#[test]
fn transition_matrix_rows() {
    let v = json(&evflow(&["matrices", "--which", "T", "--format", "json", &psoriasis()]));
    assert_eq!(v["name"], "T");
    let rows: Vec<&str> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    assert_eq!(rows, ["ETN", "IXE_Q2W", "IXE_Q4W", "PBO", "SEC_150", "SEC_300", "UST"]);
    for row in v["values"].as_array().unwrap() {
        let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    let pretty = stdout(&evflow(&["matrices", "--which", "T", &psoriasis()]));
    assert!(pretty.lines().any(|l| l.starts_with("IXE_Q4W") && l.contains("0.000")));
}

#[test]
fn contrast_map_of_one_trial() {
    let path = temp_csv("two-arm", "study,treatment,mean,variance\ns,a,0.1,0.2\ns,b,0.3,0.4\n");
    let v = json(&evflow(&[
        "matrices",
        "--which",
        "C",
        "--format",
        "json",
        path.to_str().unwrap(),
    ]));
    assert_eq!(v["values"], serde_json::json!([[-1.0, 1.0]]));
    let o = evflow(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn aggregate_hat_row() {
    let v = json(&evflow(&[
        "matrices",
        "--which",
        "Hagg",
        "--format",
        "json",
        &fictional(),
    ]));
    let col = v["cols"].as_array().unwrap().iter().position(|c| c == "[c,d]").unwrap();
    let x = v["values"][0][col].as_f64().unwrap();
    assert!((x + 0.02).abs() < 0.005, "{x}");
}

#[test]
fn every_matrix_is_available() {
    let v = json(&evflow(&["matrices", "--format", "json", &fictional()]));
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["name"].as_str().unwrap())
        .collect();
    for n in [
        "C", "X", "Sigma", "W", "H", "Harm", "Hagg", "B", "Bbi", "A", "R", "J", "I", "T", "Pup", "Pdown", "P", "Ptilde",
    ] {
        assert!(names.contains(&n), "{n}");
    }
    let csv = stdout(&evflow(&[
        "matrices",
        "--which",
        "X,W",
        "--format",
        "csv",
        &fictional(),
    ]));
    assert!(csv.contains("# X\n") && csv.contains("# W\n"));
}

#[test]
fn bipartite_flow_is_full_precision() {
    let v = json(&evflow(&[
        "flow",
        "--from",
        "IXE_Q2W",
        "--to",
        "SEC_300",
        "--graph",
        "bi",
        &psoriasis(),
    ]));
    let flows = v["flows"].as_array().unwrap();
    assert_eq!(flows.len(), 28);
    let hats = HatMatrices::compute(&fixtures::psoriasis(), &ModelSpec::common_effect()).unwrap();
    let row = expand_consistency(&hats.arm_level, "IXE_Q2W", "SEC_300").unwrap();
    for (f, want) in flows.iter().zip(&row.values) {
        assert_eq!(f["value"].as_f64().unwrap(), *want);
    }
}

#[test]
fn self_comparison_has_no_flow() {
    let v = json(&evflow(&["flow", "--from", "b", "--to", "b", &fictional()]));
    assert!(v["flows"]
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["value"].as_f64().unwrap() == 0.0));
}

#[test]
fn unipartite_flow_methods_agree() {
    let hat = json(&evflow(&[
        "flow",
        "--graph",
        "uni",
        "--from",
        "a",
        "--to",
        "b",
        &fictional(),
    ]));
    let walk = json(&evflow(&[
        "flow",
        "--graph",
        "uni",
        "--method",
        "walk",
        "--from",
        "a",
        "--to",
        "b",
        &fictional(),
    ]));
    let values = |v: &Value| -> Vec<f64> {
        v["flows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["value"].as_f64().unwrap())
            .collect()
    };
    let (h, w) = (values(&hat), values(&walk));
    assert_eq!(h.len(), 6);
    assert!((h[0] - 0.812).abs() < 5e-4);
    assert!(h.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-12));

    let dot = stdout(&evflow(&[
        "flow",
        "--graph",
        "uni",
        "--format",
        "dot",
        "--from",
        "a",
        "--to",
        "b",
        &fictional(),
    ]));
    assert!(dot.starts_with("digraph"));
}

#[test]
fn verify_passes_on_fixtures() {
    let o = evflow(&["verify", "--format", "json", &psoriasis()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    for r in v.as_array().unwrap() {
        assert_eq!(r["pass"], true);
    }
}

#[test]
fn input_errors_exit_with_two() {
    let o = evflow(&["flow", "--from", "a", "--to", "zz", &fictional()]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "UnknownTreatment");

    let o = evflow(&["ingest-check", "/nonexistent/file.csv"]);
    assert_eq!(o.status.code(), Some(2));

    let path = temp_csv("single", "study,treatment,mean,variance\ns,a,0.1,0.2\n");
    let o = evflow(&["ingest-check", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = evflow(&["ingest-check", "--no-continuity-correction", &psoriasis()]);
    assert_eq!(o.status.code(), Some(2));

    let o = evflow(&["matrices", "--which", "Q", &fictional()]);
    assert_eq!(o.status.code(), Some(2));

    let o = evflow(&["verify", "--tau", "-1", &fictional()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ingest_summary() {
    let v = json(&evflow(&["ingest-check", "--format", "json", &psoriasis()]));
    assert_eq!(v["treatments"], 7);
    assert_eq!(v["trials"], 9);
    assert_eq!(v["arms"], 28);
    assert_eq!(v["baseline"], "ETN");
    let v = json(&evflow(&[
        "ingest-check",
        "--format",
        "json",
        "--baseline",
        "PBO",
        &psoriasis(),
    ]));
    assert_eq!(v["baseline"], "PBO");
}

#[test]
fn graph_metrics() {
    let v = json(&evflow(&["metrics", "--format", "json", &fictional()]));
    assert_eq!(v["unipartite"]["edges"], 6);
    assert_eq!(v["bipartite"]["edges"], 12);
}

#[test]
fn simulation_is_reproducible_across_thread_counts() {
    let args = [
        "simulate",
        "--networks",
        "12",
        "--seed",
        "42",
        "--max-treatments",
        "10",
        "--max-trials",
        "20",
    ];
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_evflow"))
            .args(args)
            .env("EVFLOW_THREADS", threads)
            .output()
            .unwrap()
    };
    let a = run("1");
    let b = run("4");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    let summary: Value = serde_json::from_str(lines[12]).unwrap();
    assert_eq!(summary["summary"]["all_pass"], true);
    assert_eq!(summary["summary"]["networks"], 12);
}

#[test]
fn empty_simulation_and_metrics_csv() {
    let o = evflow(&["simulate", "--networks", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::env::temp_dir().join(format!("evflow-{}-metrics.csv", std::process::id()));
    let o = evflow(&[
        "simulate",
        "--networks",
        "3",
        "--max-treatments",
        "5",
        "--max-trials",
        "5",
        "--summary-only",
        "--metrics-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 4);
    assert!(body.starts_with("index,"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_evflow"))
        .args(["simulate", "--networks", "1"])
        .env("EVFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
