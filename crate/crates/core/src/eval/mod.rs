//! Evaluation: subject folds, score metrics, cross-validation, reports.

pub mod crossval;
pub mod folds;
pub mod metrics;
pub mod report;

pub use crossval::{evaluate, CrossvalConfig, CrossvalOutcome, EvalReport, FoldOutcome};
pub use folds::{plan_folds, FoldPlan};
pub use metrics::{ClassScores, ConfusionMatrix};
pub use report::{scan_results_dir, write_outcome_csvs, FscoreGrid};
