//! Labeled dense matrices and the few numerical kernels shared by every
//! module: SVD pseudo-inverses, block-diagonal storage and small helpers.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A typed row or column label.
///
/// Treatments and trials are referenced by name so that a labeled matrix can
/// be printed or serialized without the dataset it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Label {
    Treatment {
        name: String,
    },
    Trial {
        name: String,
    },
    /// A relative effect `from` -> `to` (e.g. a basic parameter versus the baseline).
    Comparison {
        from: String,
        to: String,
    },
    /// A within-trial contrast of `arm` against the trial baseline.
    Contrast {
        trial: String,
        baseline: String,
        arm: String,
    },
    /// A trial arm, i.e. an edge of the bipartite graph.
    Arm {
        trial: String,
        treatment: String,
    },
    /// An edge of the unipartite treatment graph.
    Edge {
        from: String,
        to: String,
    },
}

impl Label {
    pub fn treatment(name: impl Into<String>) -> Self {
        Label::Treatment { name: name.into() }
    }

    pub fn trial(name: impl Into<String>) -> Self {
        Label::Trial { name: name.into() }
    }

    pub fn comparison(from: impl Into<String>, to: impl Into<String>) -> Self {
        Label::Comparison {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn arm(trial: impl Into<String>, treatment: impl Into<String>) -> Self {
        Label::Arm {
            trial: trial.into(),
            treatment: treatment.into(),
        }
    }

    pub fn edge(from: impl Into<String>, to: impl Into<String>) -> Self {
        Label::Edge {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Treatment { name } | Label::Trial { name } => write!(f, "{name}"),
            Label::Comparison { from, to } => write!(f, "{from}:{to}"),
            Label::Contrast { trial, baseline, arm } => write!(f, "{trial}[{baseline}:{arm}]"),
            Label::Arm { trial, treatment } => write!(f, "[{trial},{treatment}]"),
            Label::Edge { from, to } => write!(f, "[{from},{to}]"),
        }
    }
}

/// A dense real matrix whose rows and columns carry [`Label`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_labels: Vec<Label>,
    pub col_labels: Vec<Label>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn new(row_labels: Vec<Label>, col_labels: Vec<Label>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != row_labels.len() || values.ncols() != col_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix with {} row and {} column labels",
                values.nrows(),
                values.ncols(),
                row_labels.len(),
                col_labels.len()
            )));
        }
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.nrows(), self.ncols()]
    }

    pub fn row_index(&self, label: &Label) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    pub fn col_index(&self, label: &Label) -> Option<usize> {
        self.col_labels.iter().position(|l| l == label)
    }

    pub fn get(&self, row: &Label, col: &Label) -> Option<f64> {
        Some(self.values[(self.row_index(row)?, self.col_index(col)?)])
    }

    pub fn row(&self, i: usize) -> LabeledRow {
        LabeledRow {
            label: self.row_labels[i].clone(),
            col_labels: self.col_labels.clone(),
            values: self.values.row(i).iter().copied().collect(),
        }
    }

    /// Largest absolute elementwise difference; the label sets must agree.
    pub fn max_abs_diff(&self, other: &LabeledMatrix) -> Result<f64> {
        if self.row_labels != other.row_labels || self.col_labels != other.col_labels {
            return Err(Error::DimensionMismatch("matrices carry different labels".into()));
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }

    /// Renders the matrix rounded to `decimals` places, one row per line.
    pub fn pretty(&self, decimals: usize) -> String {
        let row_names: Vec<String> = self.row_labels.iter().map(|l| l.to_string()).collect();
        let col_names: Vec<String> = self.col_labels.iter().map(|l| l.to_string()).collect();
        let cells: Vec<Vec<String>> = (0..self.nrows())
            .map(|i| {
                (0..self.ncols())
                    .map(|j| format_rounded(self.values[(i, j)], decimals))
                    .collect()
            })
            .collect();
        let head = row_names.iter().map(|s| s.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..self.ncols())
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].len())
                    .chain(std::iter::once(col_names[j].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        out.push_str(&" ".repeat(head));
        for (name, w) in col_names.iter().zip(&widths) {
            out.push_str(&format!("  {name:>w$}"));
        }
        out.push('\n');
        for (name, row) in row_names.iter().zip(&cells) {
            out.push_str(&format!("{name:<head$}"));
            for (cell, w) in row.iter().zip(&widths) {
                out.push_str(&format!("  {cell:>w$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Row-major form of a labeled matrix for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn table(&self) -> MatrixTable {
        MatrixTable {
            rows: self.row_labels.iter().map(|l| l.to_string()).collect(),
            cols: self.col_labels.iter().map(|l| l.to_string()).collect(),
            values: self.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    /// CSV with a leading label column; values at full precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec![String::new()];
        head.extend(self.col_labels.iter().map(|l| l.to_string()));
        w.write_record(&head)?;
        for (i, l) in self.row_labels.iter().enumerate() {
            let mut rec = vec![l.to_string()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// A single labeled row, e.g. one consistency-expanded hat-matrix row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub label: Label,
    pub col_labels: Vec<Label>,
    pub values: Vec<f64>,
}

impl LabeledRow {
    pub fn get(&self, col: &Label) -> Option<f64> {
        self.col_labels.iter().position(|l| l == col).map(|j| self.values[j])
    }
}

/// Rounds for display, never printing `-0.000`.
pub fn format_rounded(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `C_n = [-1 | I]`, the (n-1) x n map from n node values to differences
/// against the first node.
pub fn baseline_contrasts(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n.saturating_sub(1), n, |i, j| {
        if j == 0 {
            -1.0
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Moore-Penrose pseudo-inverse via SVD together with the numerical rank.
///
/// Singular values at or below `max(rows, cols) * sigma_max * eps` are
/// treated as zero. The decomposition is done by faer; nalgebra's iterative
/// SVD loses accuracy on nearly singular Laplacians.
pub fn pinv(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok((DMatrix::zeros(c, r), 0));
    }
    let m = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)]);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::RankDeficient(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let sigma_max = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let tol = r.max(c) as f64 * sigma_max * f64::EPSILON;
    let kept: Vec<usize> = (0..k).filter(|&i| s[i] > tol).collect();
    // V_k diag(1/s_k) U_k'
    let out = DMatrix::from_fn(c, r, |i, j| kept.iter().map(|&l| v[(i, l)] * u[(j, l)] / s[l]).sum());
    Ok((out, kept.len()))
}

/// Pseudo-inverse of the Laplacian of a connected graph; the rank deficiency
/// must be exactly one.
pub fn laplacian_pinv(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let (p, rank) = pinv(l)?;
    if rank + 1 != n {
        return Err(Error::RankDeficient(format!(
            "Laplacian of order {n} has rank {rank}, expected {}",
            n.saturating_sub(1)
        )));
    }
    Ok(p)
}

/// A block-diagonal matrix stored as its (possibly rectangular) blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Self {
        Self { blocks }
    }

    pub fn nrows(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn ncols(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        let (mut r0, mut c0) = (0, 0);
        for b in &self.blocks {
            out.view_mut((r0, c0), b.shape()).copy_from(b);
            r0 += b.nrows();
            c0 += b.ncols();
        }
        out
    }

    /// `A * self` for a dense `A`, exploiting the block structure.
    ///
    /// Each output entry accumulates the inner products in increasing index
    /// order, matching a naive dense product term for term.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.ncols(), self.nrows(), "left_mul dimension mismatch");
        let mut out = DMatrix::zeros(a.nrows(), self.ncols());
        let (mut r0, mut c0) = (0, 0);
        for b in &self.blocks {
            for j in 0..b.ncols() {
                for i in 0..a.nrows() {
                    let mut acc = 0.0;
                    for k in 0..b.nrows() {
                        acc += a[(i, r0 + k)] * b[(k, j)];
                    }
                    out[(i, c0 + j)] = acc;
                }
            }
            r0 += b.nrows();
            c0 += b.ncols();
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols(), "mul_vec dimension mismatch");
        let mut out = DVector::zeros(self.nrows());
        let (mut r0, mut c0) = (0, 0);
        for b in &self.blocks {
            let part = b * x.rows(c0, b.ncols());
            out.rows_mut(r0, b.nrows()).copy_from(&part);
            r0 += b.nrows();
            c0 += b.ncols();
        }
        out
    }
}
