//! Evidence flow in network meta-analysis.
//!
//! A dataset of trial arms is represented as a weighted bipartite graph of
//! trials and treatments. From it the crate builds the trial-level, arm-level
//! and aggregate hat matrices, reads their rows as evidence-flow networks, and
//! relates those flows to random walks and to currents in a resistor network.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dot;
pub mod electrical;
pub mod error;
pub mod fixtures;
pub mod graphs;
pub mod hat;
pub mod linalg;
pub mod model;
pub mod randomwalk;
pub mod rng;
pub mod simgen;
pub mod verify;

pub use dataset::{
    load_arm_csv, parse_arm_csv, ArmObservation, ArmRecord, EffectModel, LoadOptions, ModelSpec, NmaDataset,
    TreatmentId, TrialId,
};
pub use error::{Error, Result};
pub use graphs::{BipartiteGraph, FlowNetwork, UnipartiteGraph};
pub use hat::{DirectEvidence, HatMatrices};
pub use linalg::{Label, LabeledMatrix, LabeledRow};
pub use verify::VerificationReport;
