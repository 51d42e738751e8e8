use thiserror::Error;

/// Errors raised while ingesting a dataset or computing any of the derived
/// matrices, walks and reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`; expected header study,treatment,mean,variance or study,treatment,events,total")]
    MissingColumn(String),

    #[error("invalid value in row {row}: {message}")]
    InvalidValue { row: usize, message: String },

    #[error("duplicate arm: trial `{trial}` lists treatment `{treatment}` more than once")]
    DuplicateArm { trial: String, treatment: String },

    #[error("trial `{0}` has fewer than two arms")]
    SingleArmTrial(String),

    #[error("the treatment-trial network is disconnected ({components} components)")]
    DisconnectedNetwork { components: usize },

    #[error("non-positive variance {variance} for treatment `{treatment}` in trial `{trial}`")]
    NonpositiveVariance {
        trial: String,
        treatment: String,
        variance: f64,
    },

    #[error("trial `{trial}` arm `{treatment}` has {events} events out of {total}; enable the continuity correction to ingest it")]
    ZeroOrFullEvents {
        trial: String,
        treatment: String,
        events: f64,
        total: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown treatment `{0}`")]
    UnknownTreatment(String),

    #[error("negative heterogeneity standard deviation {0}")]
    InvalidTau(f64),

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("contrast covariance block of trial `{0}` is singular")]
    SingularCovariance(String),

    #[error("multi-arm adjustment failed to reproduce the contrast variances (max error {max_error:e})")]
    NonrealizableTrial { max_error: f64 },

    #[error("flow conservation violated at node `{node}` (residual {residual:e})")]
    ConservationViolation { node: String, residual: f64 },

    #[error("node `{0}` has no outgoing weight")]
    IsolatedNode(String),

    #[error("row `{0}` has no off-diagonal probability mass")]
    AbsorbingRow(String),

    #[error("sink `{sink}` is unreachable from `{start}`")]
    SingularFundamentalMatrix { start: String, sink: String },

    #[error("walk exceeded the step cap of {0}")]
    WalkLimitExceeded(u64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
