//! Contrast-level model matrices: the contrast map C, the design matrix X and
//! the within-trial covariance Σ + Ω with its inverse W.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{ModelSpec, NmaDataset, TrialId};
use crate::error::{Error, Result};
use crate::linalg::{baseline_contrasts, BlockDiagonal, Label, LabeledMatrix};

/// Within-trial contrast labels: each non-baseline arm against the trial's
/// first treatment, trial-major.
pub fn contrast_labels(dataset: &NmaDataset) -> Vec<Label> {
    let mut out = Vec::with_capacity(dataset.n_contrasts());
    for trial in dataset.trial_ids() {
        let arms = dataset.trial_arms(trial);
        let base = dataset.treatment_name(arms[0].treatment);
        for a in &arms[1..] {
            out.push(Label::Contrast {
                trial: dataset.trial_name(trial).to_string(),
                baseline: base.to_string(),
                arm: dataset.treatment_name(a.treatment).to_string(),
            });
        }
    }
    out
}

/// C as per-trial blocks `[-1 | I]`.
pub fn contrast_blocks(dataset: &NmaDataset) -> BlockDiagonal {
    BlockDiagonal::new(
        dataset
            .trial_ids()
            .map(|t| baseline_contrasts(dataset.trial_arms(t).len()))
            .collect(),
    )
}

pub fn build_contrast_map(dataset: &NmaDataset) -> LabeledMatrix {
    LabeledMatrix {
        row_labels: contrast_labels(dataset),
        col_labels: dataset.arm_labels(),
        values: contrast_blocks(dataset).to_dense(),
    }
}

/// Observed contrasts `y = C mu`.
pub fn contrast_observations(dataset: &NmaDataset) -> DVector<f64> {
    contrast_blocks(dataset).mul_vec(&DVector::from_vec(dataset.means()))
}

pub fn design_matrix(dataset: &NmaDataset) -> DMatrix<f64> {
    let base = dataset.baseline();
    let column = |t: usize| if t < base.0 { t } else { t - 1 };
    let mut x = DMatrix::zeros(dataset.n_contrasts(), dataset.n_treatments() - 1);
    let mut row = 0;
    for trial in dataset.trial_ids() {
        let arms = dataset.trial_arms(trial);
        let first = arms[0].treatment;
        for a in &arms[1..] {
            if a.treatment != base {
                x[(row, column(a.treatment.0))] = 1.0;
            }
            if first != base {
                x[(row, column(first.0))] = -1.0;
            }
            row += 1;
        }
    }
    x
}

pub fn build_design_matrix(dataset: &NmaDataset) -> LabeledMatrix {
    LabeledMatrix {
        row_labels: contrast_labels(dataset),
        col_labels: dataset.basic_labels(),
        values: design_matrix(dataset),
    }
}

/// Σ + Ω and W = (Σ + Ω)⁻¹, both stored per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub labels: Vec<Label>,
    pub sigma: BlockDiagonal,
    pub weights: BlockDiagonal,
}

impl Covariance {
    pub fn sigma_matrix(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_labels: self.labels.clone(),
            col_labels: self.labels.clone(),
            values: self.sigma.to_dense(),
        }
    }

    pub fn weight_matrix(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_labels: self.labels.clone(),
            col_labels: self.labels.clone(),
            values: self.weights.to_dense(),
        }
    }
}

/// Covariance block of one trial: `s_b + s_l + tau^2` on the diagonal and
/// `s_b + tau^2 / 2` elsewhere, where `s_b` is the trial baseline's variance.
pub fn trial_covariance_block(dataset: &NmaDataset, trial: TrialId, spec: &ModelSpec) -> DMatrix<f64> {
    let arms = dataset.trial_arms(trial);
    let base = arms[0].variance;
    let tau2 = spec.tau2();
    let n = arms.len() - 1;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            base + arms[i + 1].variance + tau2
        } else {
            base + tau2 / 2.0
        }
    })
}

pub fn build_covariance(dataset: &NmaDataset, spec: &ModelSpec) -> Result<Covariance> {
    let mut sigma = Vec::with_capacity(dataset.n_trials());
    let mut weights = Vec::with_capacity(dataset.n_trials());
    for trial in dataset.trial_ids() {
        let block = trial_covariance_block(dataset, trial, spec);
        let inv = block
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance(dataset.trial_name(trial).to_string()))?
            .inverse();
        weights.push((&inv + inv.transpose()) * 0.5);
        sigma.push(block);
    }
    Ok(Covariance {
        labels: contrast_labels(dataset),
        sigma: BlockDiagonal::new(sigma),
        weights: BlockDiagonal::new(weights),
    })
}
