//! Update metrics, belief-detection metrics, evaluation protocols and the
//! block bootstrap.

pub mod bootstrap;
pub mod detection;
pub mod protocol;

pub use bootstrap::{block_bootstrap, BootstrapResult, DEFAULT_RESAMPLES};
pub use detection::{belief_report, belief_report_from_predictions, paraphrase_consistency, BeliefReport, RecordPredictions};
pub use protocol::{
    evaluate_sequential_updates, evaluate_single_updates, EvalConfig, EvalResult, TargetPolicy, UpdateOutcome,
    UpdateSummary,
};
