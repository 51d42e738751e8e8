//! Arm-level NMA datasets: validation, canonical ordering and CSV ingestion.
//!
//! Treatments and trials are sorted lexicographically by label and arms are
//! ordered trial-major, then by treatment. Every matrix in the crate uses this
//! ordering, so reordering the rows of an input file never changes a result.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreatmentId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialId(pub usize);

/// One observed arm: a treatment's mean outcome (log-odds) and its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmObservation {
    pub trial: TrialId,
    pub treatment: TreatmentId,
    pub mean: f64,
    pub variance: f64,
}

/// A raw input row before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub study: String,
    pub treatment: String,
    pub mean: f64,
    pub variance: f64,
}

impl ArmRecord {
    pub fn new(study: impl Into<String>, treatment: impl Into<String>, mean: f64, variance: f64) -> Self {
        Self {
            study: study.into(),
            treatment: treatment.into(),
            mean,
            variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectModel {
    CommonEffect,
    RandomEffects,
}

/// Common-effect or random-effects model with a fixed between-trial SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    effect_model: EffectModel,
    tau: f64,
}

impl ModelSpec {
    pub fn common_effect() -> Self {
        Self {
            effect_model: EffectModel::CommonEffect,
            tau: 0.0,
        }
    }

    /// Random effects with between-trial SD `tau`. `tau = 0` behaves exactly
    /// like the common-effect model.
    pub fn random_effects(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidTau(tau));
        }
        Ok(Self {
            effect_model: EffectModel::RandomEffects,
            tau,
        })
    }

    /// `tau > 0` gives random effects, `tau = 0` common effect.
    pub fn from_tau(tau: f64) -> Result<Self> {
        if tau == 0.0 {
            Ok(Self::common_effect())
        } else {
            Self::random_effects(tau)
        }
    }

    pub fn effect_model(&self) -> EffectModel {
        self.effect_model
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau2(&self) -> f64 {
        self.tau * self.tau
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::common_effect()
    }
}

/// A validated arm-level dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NmaDataset {
    treatments: Vec<String>,
    trials: Vec<String>,
    arms: Vec<ArmObservation>,
    trial_ranges: Vec<Range<usize>>,
    baseline: TreatmentId,
}

impl NmaDataset {
    /// Validates and canonically orders a set of arm records. The first
    /// treatment in lexicographic order becomes the baseline.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = ArmRecord>,
    {
        let records: Vec<ArmRecord> = records.into_iter().collect();
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for r in &records {
            if !(r.variance > 0.0) || !r.variance.is_finite() {
                return Err(Error::NonpositiveVariance {
                    trial: r.study.clone(),
                    treatment: r.treatment.clone(),
                    variance: r.variance,
                });
            }
            if !r.mean.is_finite() {
                return Err(Error::InvalidValue {
                    row: 0,
                    message: format!("non-finite mean for {} in {}", r.treatment, r.study),
                });
            }
        }

        let treatments: Vec<String> = records
            .iter()
            .map(|r| r.treatment.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let trials: Vec<String> = records
            .iter()
            .map(|r| r.study.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let t_index: BTreeMap<&str, usize> = treatments.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let s_index: BTreeMap<&str, usize> = trials.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut by_key: BTreeMap<(usize, usize), ArmObservation> = BTreeMap::new();
        for r in &records {
            let trial = TrialId(s_index[r.study.as_str()]);
            let treatment = TreatmentId(t_index[r.treatment.as_str()]);
            let obs = ArmObservation {
                trial,
                treatment,
                mean: r.mean,
                variance: r.variance,
            };
            if by_key.insert((trial.0, treatment.0), obs).is_some() {
                return Err(Error::DuplicateArm {
                    trial: r.study.clone(),
                    treatment: r.treatment.clone(),
                });
            }
        }
        let arms: Vec<ArmObservation> = by_key.into_values().collect();

        let mut trial_ranges = Vec::with_capacity(trials.len());
        let mut start = 0;
        for (i, name) in trials.iter().enumerate() {
            let end = start + arms[start..].iter().take_while(|a| a.trial.0 == i).count();
            if end - start < 2 {
                return Err(Error::SingleArmTrial(name.clone()));
            }
            trial_ranges.push(start..end);
            start = end;
        }

        let dataset = Self {
            treatments,
            trials,
            arms,
            trial_ranges,
            baseline: TreatmentId(0),
        };
        let components = dataset.component_count();
        if components > 1 {
            return Err(Error::DisconnectedNetwork { components });
        }
        Ok(dataset)
    }

    /// Returns a copy with a different global baseline treatment.
    pub fn with_baseline(mut self, name: &str) -> Result<Self> {
        self.baseline = self.treatment_id(name)?;
        Ok(self)
    }

    fn component_count(&self) -> usize {
        let n = self.treatments.len() + self.trials.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let m = self.trials.len();
        for a in &self.arms {
            let (x, y) = (find(&mut parent, a.trial.0), find(&mut parent, m + a.treatment.0));
            if x != y {
                parent[x] = y;
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Number of within-trial contrasts, `sum_i (n_i - 1)`.
    pub fn n_contrasts(&self) -> usize {
        self.arms.len() - self.trials.len()
    }

    pub fn treatments(&self) -> &[String] {
        &self.treatments
    }

    pub fn trials(&self) -> &[String] {
        &self.trials
    }

    pub fn arms(&self) -> &[ArmObservation] {
        &self.arms
    }

    pub fn trial_arms(&self, trial: TrialId) -> &[ArmObservation] {
        &self.arms[self.trial_ranges[trial.0].clone()]
    }

    pub fn trial_arm_range(&self, trial: TrialId) -> Range<usize> {
        self.trial_ranges[trial.0].clone()
    }

    pub fn trial_ids(&self) -> impl Iterator<Item = TrialId> {
        (0..self.trials.len()).map(TrialId)
    }

    pub fn baseline(&self) -> TreatmentId {
        self.baseline
    }

    pub fn treatment_id(&self, name: &str) -> Result<TreatmentId> {
        self.treatments
            .iter()
            .position(|t| t == name)
            .map(TreatmentId)
            .ok_or_else(|| Error::UnknownTreatment(name.to_string()))
    }

    pub fn treatment_name(&self, id: TreatmentId) -> &str {
        &self.treatments[id.0]
    }

    pub fn trial_name(&self, id: TrialId) -> &str {
        &self.trials[id.0]
    }

    /// Treatments other than the baseline, in canonical order; these index
    /// the basic parameters.
    pub fn basic_treatments(&self) -> Vec<TreatmentId> {
        (0..self.treatments.len())
            .map(TreatmentId)
            .filter(|&t| t != self.baseline)
            .collect()
    }

    /// Row labels of every `(N-1) x ...` hat matrix: baseline versus each
    /// other treatment.
    pub fn basic_labels(&self) -> Vec<Label> {
        let base = self.treatment_name(self.baseline);
        self.basic_treatments()
            .into_iter()
            .map(|t| Label::comparison(base, self.treatment_name(t)))
            .collect()
    }

    pub fn arm_labels(&self) -> Vec<Label> {
        self.arms
            .iter()
            .map(|a| Label::arm(self.trial_name(a.trial), self.treatment_name(a.treatment)))
            .collect()
    }

    pub fn treatment_labels(&self) -> Vec<Label> {
        self.treatments.iter().map(Label::treatment).collect()
    }

    pub fn trial_labels(&self) -> Vec<Label> {
        self.trials.iter().map(Label::trial).collect()
    }

    /// Arm means in canonical arm order.
    pub fn means(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.mean).collect()
    }

    /// Back to raw records (canonical order).
    pub fn records(&self) -> Vec<ArmRecord> {
        self.arms
            .iter()
            .map(|a| {
                ArmRecord::new(
                    self.trial_name(a.trial),
                    self.treatment_name(a.treatment),
                    a.mean,
                    a.variance,
                )
            })
            .collect()
    }
}

/// Options for [`load_arm_csv`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Add 0.5 to events and non-events of every arm in a trial that has an
    /// arm with zero or all events.
    pub continuity_correction: bool,
}

pub fn load_arm_csv(path: impl AsRef<Path>, options: LoadOptions) -> Result<NmaDataset> {
    let file = std::fs::File::open(path)?;
    parse_arm_csv(file, options)
}

/// Reads either `study,treatment,mean,variance` or
/// `study,treatment,events,total`. Binomial rows are transformed to log-odds
/// `ln(r / (n - r))` with variance `1/r + 1/(n - r)`.
pub fn parse_arm_csv<R: Read>(reader: R, options: LoadOptions) -> Result<NmaDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let study = col("study").ok_or_else(|| Error::MissingColumn("study".into()))?;
    let treatment = col("treatment").ok_or_else(|| Error::MissingColumn("treatment".into()))?;

    enum Schema {
        Continuous { mean: usize, variance: usize },
        Binomial { events: usize, total: usize },
    }
    let schema = match (col("mean"), col("variance"), col("events"), col("total")) {
        (Some(mean), Some(variance), _, _) => Schema::Continuous { mean, variance },
        (_, _, Some(events), Some(total)) => Schema::Binomial { events, total },
        (Some(_), None, _, _) => return Err(Error::MissingColumn("variance".into())),
        (None, Some(_), _, _) => return Err(Error::MissingColumn("mean".into())),
        (_, _, Some(_), None) => return Err(Error::MissingColumn("total".into())),
        _ => return Err(Error::MissingColumn("mean".into())),
    };

    let parse = |rec: &csv::StringRecord, idx: usize, row: usize| -> Result<f64> {
        let raw = rec.get(idx).unwrap_or("");
        raw.parse::<f64>().map_err(|_| Error::InvalidValue {
            row,
            message: format!("`{raw}` is not a number"),
        })
    };

    let mut raw_rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let s = rec.get(study).unwrap_or("").to_string();
        let t = rec.get(treatment).unwrap_or("").to_string();
        if s.is_empty() || t.is_empty() {
            return Err(Error::InvalidValue {
                row,
                message: "empty study or treatment label".into(),
            });
        }
        let (a, b) = match schema {
            Schema::Continuous { mean, variance } => (parse(&rec, mean, row)?, parse(&rec, variance, row)?),
            Schema::Binomial { events, total } => (parse(&rec, events, row)?, parse(&rec, total, row)?),
        };
        raw_rows.push((row, s, t, a, b));
    }

    let records = match schema {
        Schema::Continuous { .. } => raw_rows
            .into_iter()
            .map(|(_, s, t, mean, variance)| ArmRecord::new(s, t, mean, variance))
            .collect(),
        Schema::Binomial { .. } => binomial_to_log_odds(raw_rows, options)?,
    };
    NmaDataset::from_records(records)
}

fn binomial_to_log_odds(rows: Vec<(usize, String, String, f64, f64)>, options: LoadOptions) -> Result<Vec<ArmRecord>> {
    for (row, _, _, r, n) in &rows {
        if !(*n > 0.0) || *r < 0.0 || r > n || !r.is_finite() || !n.is_finite() {
            return Err(Error::InvalidValue {
                row: *row,
                message: format!("events {r} out of total {n}"),
            });
        }
    }
    let mut needs_correction: BTreeSet<&str> = BTreeSet::new();
    for (_, s, t, r, n) in &rows {
        if *r == 0.0 || r == n {
            if !options.continuity_correction {
                return Err(Error::ZeroOrFullEvents {
                    trial: s.clone(),
                    treatment: t.clone(),
                    events: *r,
                    total: *n,
                });
            }
            needs_correction.insert(s);
        }
    }
    Ok(rows
        .iter()
        .map(|(_, s, t, r, n)| {
            let (r, n) = if needs_correction.contains(s.as_str()) {
                (r + 0.5, n + 1.0)
            } else {
                (*r, *n)
            };
            ArmRecord::new(s.clone(), t.clone(), (r / (n - r)).ln(), 1.0 / r + 1.0 / (n - r))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, t: &str, v: f64) -> ArmRecord {
        ArmRecord::new(s, t, 0.0, v)
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let d = NmaDataset::from_records(vec![
            rec("s2", "c", 1.0),
            rec("s1", "b", 1.0),
            rec("s2", "a", 1.0),
            rec("s1", "a", 1.0),
        ])
        .unwrap();
        assert_eq!(d.treatments(), ["a", "b", "c"]);
        assert_eq!(d.trials(), ["s1", "s2"]);
        let labels: Vec<String> = d.arm_labels().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, ["[s1,a]", "[s1,b]", "[s2,a]", "[s2,c]"]);
        assert_eq!(d.treatment_name(d.baseline()), "a");
        assert_eq!(d.n_contrasts(), 2);
    }

    #[test]
    fn single_arm_trial_is_rejected() {
        let err = NmaDataset::from_records(vec![rec("s1", "a", 1.0)]).unwrap_err();
        assert!(matches!(err, Error::SingleArmTrial(s) if s == "s1"));
    }

    #[test]
    fn disjoint_trials_are_disconnected() {
        let err = NmaDataset::from_records(vec![
            rec("s1", "a", 1.0),
            rec("s1", "b", 1.0),
            rec("s2", "c", 1.0),
            rec("s2", "d", 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DisconnectedNetwork { components: 2 }));
    }

    #[test]
    fn duplicate_and_nonpositive_variance_are_rejected() {
        let dup = NmaDataset::from_records(vec![rec("s1", "a", 1.0), rec("s1", "a", 2.0), rec("s1", "b", 1.0)]);
        assert!(matches!(dup, Err(Error::DuplicateArm { .. })));
        let zero = NmaDataset::from_records(vec![rec("s1", "a", 0.0), rec("s1", "b", 1.0)]);
        assert!(matches!(zero, Err(Error::NonpositiveVariance { .. })));
        let neg = NmaDataset::from_records(vec![rec("s1", "a", -0.1), rec("s1", "b", 1.0)]);
        assert!(matches!(neg, Err(Error::NonpositiveVariance { .. })));
    }

    #[test]
    fn baseline_override() {
        let d = NmaDataset::from_records(vec![rec("s1", "a", 1.0), rec("s1", "b", 1.0)])
            .unwrap()
            .with_baseline("b")
            .unwrap();
        assert_eq!(d.basic_labels(), vec![Label::comparison("b", "a")]);
        assert!(matches!(d.with_baseline("zzz"), Err(Error::UnknownTreatment(_))));
    }

    #[test]
    fn binomial_rows_become_log_odds() {
        let csv = "study,treatment,events,total\ns,a,10,40\ns,b,20,40\n";
        let d = parse_arm_csv(csv.as_bytes(), LoadOptions::default()).unwrap();
        let a = d.arms()[0];
        assert!((a.mean - (10.0f64 / 30.0).ln()).abs() < 1e-15);
        assert!((a.variance - (1.0 / 10.0 + 1.0 / 30.0)).abs() < 1e-15);
        assert_eq!(d.arms()[1].mean, 0.0);
    }

    #[test]
    fn zero_events_need_continuity_correction() {
        let csv = "study,treatment,events,total\ns,a,0,40\ns,b,20,40\nt,a,5,10\nt,b,6,10\n";
        let err = parse_arm_csv(csv.as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ZeroOrFullEvents { .. }));
        let d = parse_arm_csv(
            csv.as_bytes(),
            LoadOptions {
                continuity_correction: true,
            },
        )
        .unwrap();
        // every arm of trial `s` is corrected, trial `t` is left alone
        assert!((d.arms()[0].variance - (1.0 / 0.5 + 1.0 / 40.5)).abs() < 1e-14);
        assert!((d.arms()[1].variance - (1.0 / 20.5 + 1.0 / 20.5)).abs() < 1e-14);
        assert!((d.arms()[2].variance - (1.0 / 5.0 + 1.0 / 5.0)).abs() < 1e-14);
    }

    #[test]
    fn missing_columns_are_named() {
        let err = parse_arm_csv("study,treatment,mean\ns,a,1\n".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "variance"));
        let err = parse_arm_csv("trial,treatment,mean,variance\n".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "study"));
    }

    #[test]
    fn from_tau_picks_the_model() {
        assert_eq!(
            ModelSpec::from_tau(0.0).unwrap().effect_model(),
            EffectModel::CommonEffect
        );
        assert_eq!(
            ModelSpec::from_tau(0.3).unwrap().effect_model(),
            EffectModel::RandomEffects
        );
        assert!(ModelSpec::from_tau(-1.0).is_err());
        assert!(ModelSpec::random_effects(f64::NAN).is_err());
    }
}
