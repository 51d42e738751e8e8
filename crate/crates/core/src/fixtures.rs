//! Bundled example datasets.

use crate::dataset::{parse_arm_csv, LoadOptions, NmaDataset};

/// Five trials on treatments a-d, common-effect log-odds and variances.
pub const FICTIONAL_CSV: &str = include_str!("../data/fictional.csv");

/// Week-12 PASI 75 responders in nine plaque psoriasis trials (events/total).
/// FEATURE has a placebo arm with zero events, so it must be loaded with the
/// continuity correction.
pub const PSORIASIS_CSV: &str = include_str!("../data/psoriasis_pasi75.csv");

pub fn fictional() -> NmaDataset {
    parse_arm_csv(FICTIONAL_CSV.as_bytes(), LoadOptions::default()).expect("bundled fixture is valid")
}

/// The psoriasis network with continuity correction and ETN as baseline.
pub fn psoriasis() -> NmaDataset {
    parse_arm_csv(
        PSORIASIS_CSV.as_bytes(),
        LoadOptions {
            continuity_correction: true,
        },
    )
    .expect("bundled fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psoriasis_shape() {
        let d = psoriasis();
        assert_eq!((d.n_treatments(), d.n_trials(), d.n_arms()), (7, 9, 28));
        assert_eq!(d.treatment_name(d.baseline()), "ETN");
        let four_arm = d.trial_ids().filter(|&t| d.trial_arms(t).len() == 4).count();
        assert_eq!(four_arm, 3);
    }

    #[test]
    fn fictional_shape() {
        let d = fictional();
        assert_eq!((d.n_treatments(), d.n_trials(), d.n_arms()), (4, 5, 12));
    }
}
