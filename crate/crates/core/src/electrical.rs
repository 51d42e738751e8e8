//! The bipartite graph as a resistor network: arm variances are resistances
//! and each basic comparison drives a unit current from the baseline to a
//! treatment.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{ModelSpec, NmaDataset};
use crate::error::{Error, Result};
use crate::graphs::bipartite_from_dataset;
use crate::linalg::{laplacian_pinv, Label, LabeledMatrix};

/// Diagonal arm resistances `s^2 + tau^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceMatrix {
    pub labels: Vec<Label>,
    pub diagonal: Vec<f64>,
}

impl ResistanceMatrix {
    pub fn to_labeled(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_labels: self.labels.clone(),
            col_labels: self.labels.clone(),
            values: DMatrix::from_diagonal(&DVector::from_vec(self.diagonal.clone())),
        }
    }
}

pub fn resistance_matrix(dataset: &NmaDataset, spec: &ModelSpec) -> ResistanceMatrix {
    let half = spec.tau2() / 2.0;
    ResistanceMatrix {
        labels: dataset.arm_labels(),
        diagonal: dataset.arms().iter().map(|a| a.variance + half).collect(),
    }
}

/// `J' = [0 | C_N]` for N treatments and M trials, baseline first.
pub fn nodal_current_matrix(n: usize, m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(n.saturating_sub(1), m + n);
    for r in 0..n.saturating_sub(1) {
        j[(r, m)] = -1.0;
        j[(r, m + r + 1)] = 1.0;
    }
    j
}

/// Labeled J' for a dataset, honouring its baseline.
pub fn nodal_currents(dataset: &NmaDataset) -> LabeledMatrix {
    let m = dataset.n_trials();
    let base = dataset.baseline().0;
    let basic = dataset.basic_treatments();
    let mut j = DMatrix::zeros(basic.len(), m + dataset.n_treatments());
    for (r, t) in basic.iter().enumerate() {
        j[(r, m + base)] = -1.0;
        j[(r, m + t.0)] = 1.0;
    }
    let mut cols = dataset.trial_labels();
    cols.extend(dataset.treatment_labels());
    LabeledMatrix {
        row_labels: dataset.basic_labels(),
        col_labels: cols,
        values: j,
    }
}

/// `I' = J' (B' R⁻¹ B)⁺ B' R⁻¹` for the oriented arm incidence B.
pub fn edge_currents(incidence: &LabeledMatrix, r: &ResistanceMatrix, j: &LabeledMatrix) -> Result<LabeledMatrix> {
    if incidence.row_labels != r.labels || incidence.col_labels != j.col_labels {
        return Err(Error::DimensionMismatch(
            "incidence, resistances and nodal currents disagree".into(),
        ));
    }
    let mut btr = incidence.values.transpose();
    for (k, res) in r.diagonal.iter().enumerate() {
        btr.column_mut(k).scale_mut(1.0 / res);
    }
    let lap = &btr * &incidence.values;
    let lp = laplacian_pinv(&lap)?;
    LabeledMatrix::new(j.row_labels.clone(), r.labels.clone(), &j.values * lp * btr)
}

/// Edge currents of every basic comparison on the dataset's bipartite graph.
pub fn arm_currents(dataset: &NmaDataset, spec: &ModelSpec) -> Result<LabeledMatrix> {
    let graph = bipartite_from_dataset(dataset, spec);
    edge_currents(
        &graph.incidence(true),
        &resistance_matrix(dataset, spec),
        &nodal_currents(dataset),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ArmRecord;
    use crate::fixtures;
    use crate::hat::arm_hat_matrix;
    use crate::linalg::max_abs_diff;
    use crate::model::{build_contrast_map, build_covariance};

    /// `(L + 11'/n)⁻¹ - 11'/n`, valid for connected graphs only.
    fn centered_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
        let n = l.nrows();
        let j = DMatrix::from_element(n, n, 1.0 / n as f64);
        (l + &j).try_inverse().unwrap() - j
    }

    #[test]
    fn resistances_reproduce_the_contrast_covariance() {
        for d in [fixtures::fictional(), fixtures::psoriasis()] {
            let spec = ModelSpec::random_effects(0.3).unwrap();
            let r = resistance_matrix(&d, &spec).to_labeled().values;
            let c = build_contrast_map(&d).values;
            let sigma = build_covariance(&d, &spec).unwrap().sigma.to_dense();
            assert!(max_abs_diff(&(&c * r * c.transpose()), &sigma) < 1e-12);
        }
        let d = fixtures::fictional();
        let r = resistance_matrix(&d, &ModelSpec::random_effects(1.0).unwrap());
        assert!((r.diagonal[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn nodal_currents_are_balanced() {
        assert_eq!(
            nodal_current_matrix(2, 1),
            DMatrix::from_row_slice(1, 3, &[0.0, -1.0, 1.0])
        );
        let d = fixtures::psoriasis();
        let j = nodal_currents(&d);
        assert_eq!(j.dims(), [6, 16]);
        assert_eq!(j.values, nodal_current_matrix(7, 9));
        assert!(j.values.row_iter().all(|r| r.sum() == 0.0));
    }

    #[test]
    fn two_arm_trial_carries_unit_current() {
        let d = NmaDataset::from_records(vec![
            ArmRecord::new("s", "a", 0.0, 0.3),
            ArmRecord::new("s", "b", 0.0, 0.9),
        ])
        .unwrap();
        let i = arm_currents(&d, &ModelSpec::common_effect()).unwrap();
        assert!((i.values[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((i.values[(0, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kirchhoff_node_law_and_hat_equivalence() {
        let d = fixtures::fictional();
        let spec = ModelSpec::random_effects(0.2).unwrap();
        let g = bipartite_from_dataset(&d, &spec);
        let b = g.incidence(true).values;
        let i = arm_currents(&d, &spec).unwrap();
        let j = nodal_currents(&d).values;
        assert!(max_abs_diff(&(&i.values * &b), &j) < 1e-10);
        let h = arm_hat_matrix(&d, &spec).unwrap();
        assert!(h.max_abs_diff(&i).unwrap() < 1e-12);
    }

    #[test]
    fn svd_and_centered_inverse_agree() {
        let d = fixtures::psoriasis();
        let spec = ModelSpec::common_effect();
        let g = bipartite_from_dataset(&d, &spec);
        let b = g.incidence(true).values;
        let r = resistance_matrix(&d, &spec);
        let mut btr = b.transpose();
        for (k, res) in r.diagonal.iter().enumerate() {
            btr.column_mut(k).scale_mut(1.0 / res);
        }
        let lap = &btr * &b;
        let svd = laplacian_pinv(&lap).unwrap();
        assert!(max_abs_diff(&svd, &centered_inverse(&lap)) < 1e-10);
        let (_, rank) = crate::linalg::pinv(&lap).unwrap();
        assert_eq!(rank, 15);
    }
}
