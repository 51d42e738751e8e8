//! Numerical identity checks, each producing a [`VerificationReport`].

use serde::{Deserialize, Serialize};

use crate::dataset::{ModelSpec, NmaDataset};
use crate::electrical::arm_currents;
use crate::error::Result;
use crate::graphs::{bipartite_from_dataset, FlowNetwork, UnipartiteGraph};
use crate::hat::{arm_hat_matrix, direct_evidence, estimate_all, expand_consistency, HatMatrices};
use crate::linalg::LabeledMatrix;
use crate::randomwalk::{renormalize, transition_down, transition_unipartite, transition_up, two_step};

/// Square root of machine epsilon, about 1.49e-8.
pub const DEFAULT_TOLERANCE: f64 = 1.490_116_119_384_765_6e-8;

/// Tolerance of the estimate-equivalence and conservation checks.
pub const STRICT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub dims: [usize; 2],
    pub elapsed_ms: f64,
}

impl VerificationReport {
    /// `pass` is `max_abs_diff < tolerance`; NaN never passes.
    pub fn new(name: impl Into<String>, max_abs_diff: f64, tolerance: f64, dims: [usize; 2]) -> Self {
        Self {
            name: name.into(),
            max_abs_diff,
            tolerance,
            pass: max_abs_diff < tolerance,
            dims,
            elapsed_ms: 0.0,
        }
    }

    pub fn with_elapsed(mut self, ms: f64) -> Self {
        self.elapsed_ms = ms;
        self
    }
}

/// Wall-clock timer that reads zero where no clock is available (wasm).
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64() * 1e3
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Elementwise comparison of two labeled matrices. Mismatched labels yield an
/// infinite difference.
pub fn compare(name: &str, a: &LabeledMatrix, b: &LabeledMatrix, tolerance: f64) -> VerificationReport {
    let diff = a.max_abs_diff(b).unwrap_or(f64::INFINITY);
    VerificationReport::new(name, diff, tolerance, a.dims())
}

/// Arm-level hat matrix against the edge currents of the resistor network.
pub fn verify_arm_hat_currents(dataset: &NmaDataset, spec: &ModelSpec, tolerance: f64) -> Result<VerificationReport> {
    let clock = Stopwatch::start();
    let h = arm_hat_matrix(dataset, spec)?;
    let i = arm_currents(dataset, spec)?;
    Ok(compare("arm_hat_vs_edge_currents", &h, &i, tolerance).with_elapsed(clock.elapsed_ms()))
}

/// Unipartite transition matrix against the renormalised two-step walk on the
/// bipartite graph.
pub fn verify_two_step_walk(dataset: &NmaDataset, spec: &ModelSpec, tolerance: f64) -> Result<VerificationReport> {
    let clock = Stopwatch::start();
    let evidence = direct_evidence(dataset, spec)?;
    let t = transition_unipartite(&UnipartiteGraph::from_evidence(&evidence))?;
    let g = bipartite_from_dataset(dataset, spec);
    let p = renormalize(&two_step(&transition_up(&g)?, &transition_down(&g)?)?)?;
    Ok(compare("transition_vs_two_step_walk", &t.matrix, &p.matrix, tolerance).with_elapsed(clock.elapsed_ms()))
}

fn conservation_residual(hats: &HatMatrices, from: &str, to: &str) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for hat in [&hats.aggregate, &hats.arm_level] {
        let row = expand_consistency(hat, from, to)?;
        let net = FlowNetwork::from_values(from, to, &row.col_labels, &row.values, None)?;
        worst = worst.max(net.conservation_residual().1);
    }
    Ok(worst)
}

/// Unit outflow at `from`, unit inflow at `to` and balance elsewhere, for
/// both the aggregate and the arm-level flow of one comparison.
pub fn verify_flow_conservation(
    dataset: &NmaDataset,
    spec: &ModelSpec,
    from: &str,
    to: &str,
    tolerance: f64,
) -> Result<VerificationReport> {
    let clock = Stopwatch::start();
    let hats = HatMatrices::compute(dataset, spec)?;
    let residual = conservation_residual(&hats, from, to)?;
    Ok(VerificationReport::new(
        format!("flow_conservation[{from}:{to}]"),
        residual,
        tolerance,
        [2, hats.arm_level.ncols()],
    )
    .with_elapsed(clock.elapsed_ms()))
}

/// Conservation for every unordered treatment pair.
pub fn verify_flow_conservation_all(
    dataset: &NmaDataset,
    spec: &ModelSpec,
    tolerance: f64,
) -> Result<VerificationReport> {
    let clock = Stopwatch::start();
    let hats = HatMatrices::compute(dataset, spec)?;
    let names = dataset.treatments();
    let mut worst: f64 = 0.0;
    for (a, from) in names.iter().enumerate() {
        for to in &names[a + 1..] {
            worst = worst.max(conservation_residual(&hats, from, to)?);
        }
    }
    let pairs = names.len() * (names.len() - 1) / 2;
    Ok(
        VerificationReport::new("flow_conservation", worst, tolerance, [pairs, hats.arm_level.ncols()])
            .with_elapsed(clock.elapsed_ms()),
    )
}

/// Trial-level, arm-level and aggregate estimates of the basic parameters.
pub fn verify_model_equivalence(dataset: &NmaDataset, spec: &ModelSpec, tolerance: f64) -> Result<VerificationReport> {
    let clock = Stopwatch::start();
    let e = estimate_all(dataset, spec)?;
    Ok(VerificationReport::new(
        "model_equivalence",
        e.max_abs_diff(),
        tolerance,
        [3, e.trial_level.len()],
    )
    .with_elapsed(clock.elapsed_ms()))
}

/// All four checks; the two matrix identities use `tolerance`, the others
/// [`STRICT_TOLERANCE`].
pub fn verify_all(dataset: &NmaDataset, spec: &ModelSpec, tolerance: f64) -> Result<Vec<VerificationReport>> {
    Ok(vec![
        verify_arm_hat_currents(dataset, spec, tolerance)?,
        verify_two_step_walk(dataset, spec, tolerance)?,
        verify_flow_conservation_all(dataset, spec, STRICT_TOLERANCE)?,
        verify_model_equivalence(dataset, spec, STRICT_TOLERANCE)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ArmRecord;
    use crate::fixtures;

    #[test]
    fn tolerance_is_root_epsilon() {
        assert_eq!(DEFAULT_TOLERANCE, f64::EPSILON.sqrt());
    }

    #[test]
    fn fixtures_pass_every_check() {
        for d in [fixtures::fictional(), fixtures::psoriasis()] {
            for tau in [0.0, 0.5] {
                let spec = ModelSpec::from_tau(tau).unwrap();
                for r in verify_all(&d, &spec, DEFAULT_TOLERANCE).unwrap() {
                    assert!(r.pass, "{r:?}");
                }
            }
        }
    }

    #[test]
    fn single_trial_is_exact() {
        let d = NmaDataset::from_records(vec![
            ArmRecord::new("s", "a", 0.1, 0.4),
            ArmRecord::new("s", "b", 0.9, 0.7),
        ])
        .unwrap();
        let spec = ModelSpec::common_effect();
        assert_eq!(
            verify_two_step_walk(&d, &spec, DEFAULT_TOLERANCE).unwrap().max_abs_diff,
            0.0
        );
        assert!(
            verify_arm_hat_currents(&d, &spec, DEFAULT_TOLERANCE)
                .unwrap()
                .max_abs_diff
                < 1e-14
        );
        assert_eq!(
            verify_model_equivalence(&d, &spec, STRICT_TOLERANCE)
                .unwrap()
                .max_abs_diff,
            0.0
        );
    }

    #[test]
    fn perturbed_matrix_fails() {
        let d = fixtures::psoriasis();
        let spec = ModelSpec::common_effect();
        let h = arm_hat_matrix(&d, &spec).unwrap();
        let mut i = arm_currents(&d, &spec).unwrap();
        assert!(compare("x", &h, &i, DEFAULT_TOLERANCE).pass);
        i.values[(2, 5)] += 1e-6;
        let r = compare("x", &h, &i, DEFAULT_TOLERANCE);
        assert!(!r.pass);
        assert!((r.max_abs_diff - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn self_comparison_conserves_trivially() {
        let r = verify_flow_conservation(
            &fixtures::fictional(),
            &ModelSpec::common_effect(),
            "b",
            "b",
            STRICT_TOLERANCE,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_diff, 0.0);
    }

    #[test]
    fn nan_never_passes() {
        assert!(!VerificationReport::new("n", f64::NAN, 1.0, [1, 1]).pass);
        let json = serde_json::to_value(VerificationReport::new("n", 0.5, 1.0, [2, 3])).unwrap();
        assert_eq!(json["dims"], serde_json::json!([2, 3]));
        assert_eq!(json["pass"], true);
    }
}
