//! Trial-level, arm-level and aggregate hat matrices and the estimates they
//! produce.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ModelSpec, NmaDataset, TreatmentId};
use crate::error::{Error, Result};
use crate::graphs::oriented_edge_incidence;
use crate::linalg::{laplacian_pinv, pinv, Label, LabeledMatrix, LabeledRow};
use crate::model::{build_covariance, contrast_blocks, contrast_observations, design_matrix, Covariance};

/// `H = (X'WX)⁻¹ X'W` for dense X and W.
pub fn trial_hat(x: &LabeledMatrix, w: &LabeledMatrix) -> Result<LabeledMatrix> {
    let xtw = x.values.transpose() * &w.values;
    let values = solve_normal_equations(&xtw, &x.values)?;
    LabeledMatrix::new(x.col_labels.clone(), w.col_labels.clone(), values)
}

fn solve_normal_equations(xtw: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xtwx = xtw * x;
    let chol = xtwx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("X'WX is not positive definite".into()))?;
    Ok(chol.solve(xtw))
}

/// Trial-level hat matrix with W kept block-diagonal.
pub fn trial_hat_matrix(x: &DMatrix<f64>, cov: &Covariance) -> Result<DMatrix<f64>> {
    let xtw = cov.weights.left_mul(&x.transpose());
    solve_normal_equations(&xtw, x)
}

/// `H_arm = H C`.
pub fn arm_hat(trial_hat: &LabeledMatrix, c: &LabeledMatrix) -> Result<LabeledMatrix> {
    if trial_hat.col_labels != c.row_labels {
        return Err(Error::DimensionMismatch(
            "hat columns do not match contrast rows".into(),
        ));
    }
    LabeledMatrix::new(
        trial_hat.row_labels.clone(),
        c.col_labels.clone(),
        &trial_hat.values * &c.values,
    )
}

/// Splits basic-parameter row labels into the baseline name and the
/// treatment of each row.
fn basic_rows(hat: &LabeledMatrix) -> Result<(String, Vec<&str>)> {
    let mut base = None;
    let mut to = Vec::with_capacity(hat.nrows());
    for l in &hat.row_labels {
        match l {
            Label::Comparison { from, to: t } => {
                if base.get_or_insert(from.as_str()) != from {
                    return Err(Error::DimensionMismatch("hat rows mix baselines".into()));
                }
                to.push(t.as_str());
            }
            _ => return Err(Error::DimensionMismatch("hat rows must be comparisons".into())),
        }
    }
    let base = base.ok_or_else(|| Error::DimensionMismatch("hat matrix has no rows".into()))?;
    Ok((base.to_string(), to))
}

/// Row for an arbitrary comparison `from -> to` by consistency:
/// `row(from, to) = row(base, to) - row(base, from)`.
pub fn expand_consistency(hat: &LabeledMatrix, from: &str, to: &str) -> Result<LabeledRow> {
    let (base, rows) = basic_rows(hat)?;
    let lookup = |t: &str| -> Result<Option<usize>> {
        if t == base {
            Ok(None)
        } else {
            rows.iter()
                .position(|r| *r == t)
                .map(Some)
                .ok_or_else(|| Error::UnknownTreatment(t.to_string()))
        }
    };
    let (jf, jt) = (lookup(from)?, lookup(to)?);
    let values = (0..hat.ncols())
        .map(|c| {
            let a = jt.map_or(0.0, |r| hat.values[(r, c)]);
            let b = jf.map_or(0.0, |r| hat.values[(r, c)]);
            a - b
        })
        .collect();
    Ok(LabeledRow {
        label: Label::comparison(from, to),
        col_labels: hat.col_labels.clone(),
        values,
    })
}

/// Conductances of a complete graph whose effective resistances equal the
/// given pairwise contrast variances (`v[j][k] = s_j + s_k + tau^2`, zero
/// diagonal).
///
/// Uses `L⁺ = -1/2 J V J` with the centering matrix J; the adjusted weight of
/// pair (j, k) is `-L_jk`.
pub fn adjust_multiarm_weights(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    if n != v.ncols() || n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "variance table must be square with n >= 2, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    if n == 2 {
        let w = 1.0 / v[(0, 1)];
        return Ok(DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]));
    }
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let lp = (&j * v * &j) * -0.5;
    let (l, rank) = pinv(&lp)?;
    let scale = v.abs().max();
    if rank + 1 != n {
        return Err(Error::NonrealizableTrial {
            max_error: f64::INFINITY,
        });
    }
    // the recovered Laplacian must reproduce every pairwise resistance
    let back = pinv(&l)?.0;
    let mut max_error: f64 = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let r = back[(a, a)] + back[(b, b)] - 2.0 * back[(a, b)];
            max_error = max_error.max((r - v[(a, b)]).abs());
        }
    }
    if max_error > 1e-8 * scale {
        return Err(Error::NonrealizableTrial { max_error });
    }
    Ok(DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            -(l[(a, b)] + l[(b, a)]) / 2.0
        }
    }))
}

/// Direct (pairwise pooled) evidence per unipartite edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectEvidence {
    pub treatments: Vec<String>,
    pub baseline: usize,
    /// Edges `(j, k)` with `j < k` in canonical order.
    pub edges: Vec<(usize, usize)>,
    pub estimates: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DirectEvidence {
    pub fn edge_labels(&self) -> Vec<Label> {
        self.edges
            .iter()
            .map(|&(j, k)| Label::edge(&self.treatments[j], &self.treatments[k]))
            .collect()
    }

    /// `W_agg` as a labeled diagonal matrix.
    pub fn weight_matrix(&self) -> LabeledMatrix {
        let labels = self.edge_labels();
        LabeledMatrix {
            row_labels: labels.clone(),
            col_labels: labels,
            values: DMatrix::from_diagonal(&DVector::from_vec(self.weights.clone())),
        }
    }

    pub fn basic_labels(&self) -> Vec<Label> {
        let base = &self.treatments[self.baseline];
        self.treatments
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.baseline)
            .map(|(_, t)| Label::comparison(base, t))
            .collect()
    }

    pub fn incidence(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_labels: self.edge_labels(),
            col_labels: self.treatments.iter().map(Label::treatment).collect(),
            values: oriented_edge_incidence(self.treatments.len(), &self.edges),
        }
    }
}

/// Pairwise variance table `v_jk = s_j + s_k + tau^2` of one trial.
pub fn trial_pair_variances(variances: &[f64], tau2: f64) -> DMatrix<f64> {
    let n = variances.len();
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            variances[a] + variances[b] + tau2
        }
    })
}

pub fn direct_evidence(dataset: &NmaDataset, spec: &ModelSpec) -> Result<DirectEvidence> {
    let mut acc: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for trial in dataset.trial_ids() {
        let arms = dataset.trial_arms(trial);
        let vars: Vec<f64> = arms.iter().map(|a| a.variance).collect();
        let w = adjust_multiarm_weights(&trial_pair_variances(&vars, spec.tau2()))?;
        for a in 0..arms.len() {
            for b in (a + 1)..arms.len() {
                let y = arms[b].mean - arms[a].mean;
                let e = acc
                    .entry((arms[a].treatment.0, arms[b].treatment.0))
                    .or_insert((0.0, 0.0));
                e.0 += w[(a, b)];
                e.1 += w[(a, b)] * y;
            }
        }
    }
    let mut edges = Vec::with_capacity(acc.len());
    let mut estimates = Vec::with_capacity(acc.len());
    let mut weights = Vec::with_capacity(acc.len());
    for (edge, (w, wy)) in acc {
        edges.push(edge);
        weights.push(w);
        estimates.push(wy / w);
    }
    Ok(DirectEvidence {
        treatments: dataset.treatments().to_vec(),
        baseline: dataset.baseline().0,
        edges,
        estimates,
        weights,
    })
}

/// `C_N` relative to an arbitrary baseline column.
fn basic_contrasts(n: usize, baseline: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n - 1, n);
    for (r, t) in (0..n).filter(|&t| t != baseline).enumerate() {
        c[(r, baseline)] = -1.0;
        c[(r, t)] = 1.0;
    }
    c
}

fn aggregate_hat_values(b: &DMatrix<f64>, weights: &[f64], baseline: usize) -> Result<DMatrix<f64>> {
    let mut btw = b.transpose();
    for (k, w) in weights.iter().enumerate() {
        btw.column_mut(k).scale_mut(*w);
    }
    let lap = &btw * b;
    let lp = laplacian_pinv(&lap)?;
    Ok(basic_contrasts(b.ncols(), baseline) * lp * btw)
}

/// `H_agg = C_N (B'WB)⁺ B'W` for the oriented unipartite incidence B.
pub fn aggregate_hat(incidence: &LabeledMatrix, evidence: &DirectEvidence) -> Result<LabeledMatrix> {
    if incidence.nrows() != evidence.weights.len() || incidence.ncols() != evidence.treatments.len() {
        return Err(Error::DimensionMismatch(
            "incidence does not match the direct evidence".into(),
        ));
    }
    let values = aggregate_hat_values(&incidence.values, &evidence.weights, evidence.baseline)?;
    LabeledMatrix::new(evidence.basic_labels(), incidence.row_labels.clone(), values)
}

/// The three hat matrices of one dataset and model.
#[derive(Debug, Clone, PartialEq)]
pub struct HatMatrices {
    pub trial_level: LabeledMatrix,
    pub arm_level: LabeledMatrix,
    pub aggregate: LabeledMatrix,
    pub basic_estimates: Vec<f64>,
}

impl HatMatrices {
    pub fn compute(dataset: &NmaDataset, spec: &ModelSpec) -> Result<Self> {
        let cov = build_covariance(dataset, spec)?;
        let h = trial_hat_matrix(&design_matrix(dataset), &cov)?;
        let arm = contrast_blocks(dataset).left_mul(&h);
        let evidence = direct_evidence(dataset, spec)?;
        let incidence = evidence.incidence();
        let aggregate = aggregate_hat(&incidence, &evidence)?;
        let basic_estimates = (&h * contrast_observations(dataset)).iter().copied().collect();
        let rows = dataset.basic_labels();
        Ok(Self {
            trial_level: LabeledMatrix::new(rows.clone(), cov.labels, h)?,
            arm_level: LabeledMatrix::new(rows, dataset.arm_labels(), arm)?,
            aggregate,
            basic_estimates,
        })
    }
}

/// Arm-level hat matrix only, skipping the aggregate model.
pub fn arm_hat_matrix(dataset: &NmaDataset, spec: &ModelSpec) -> Result<LabeledMatrix> {
    let cov = build_covariance(dataset, spec)?;
    let h = trial_hat_matrix(&design_matrix(dataset), &cov)?;
    LabeledMatrix::new(
        dataset.basic_labels(),
        dataset.arm_labels(),
        contrast_blocks(dataset).left_mul(&h),
    )
}

/// Basic-parameter estimates from each of the three model formulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub labels: Vec<Label>,
    pub trial_level: Vec<f64>,
    pub arm_level: Vec<f64>,
    pub aggregate: Vec<f64>,
}

impl Estimates {
    /// Largest pairwise difference between the three vectors.
    pub fn max_abs_diff(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.trial_level.len() {
            let (a, b, c) = (self.trial_level[i], self.arm_level[i], self.aggregate[i]);
            m = m.max((a - b).abs()).max((a - c).abs()).max((b - c).abs());
        }
        m
    }
}

pub fn estimate_all(dataset: &NmaDataset, spec: &ModelSpec) -> Result<Estimates> {
    let hats = HatMatrices::compute(dataset, spec)?;
    let evidence = direct_evidence(dataset, spec)?;
    let mu = DVector::from_vec(dataset.means());
    let arm_level = (&hats.arm_level.values * mu).iter().copied().collect();
    let aggregate = (&hats.aggregate.values * DVector::from_vec(evidence.estimates))
        .iter()
        .copied()
        .collect();
    Ok(Estimates {
        labels: hats.trial_level.row_labels.clone(),
        trial_level: hats.basic_estimates,
        arm_level,
        aggregate,
    })
}

/// Position of the hat row for `to` relative to the baseline, if any.
pub fn basic_row(dataset: &NmaDataset, to: TreatmentId) -> Option<usize> {
    let base = dataset.baseline();
    if to == base {
        None
    } else if to.0 < base.0 {
        Some(to.0)
    } else {
        Some(to.0 - 1)
    }
}
