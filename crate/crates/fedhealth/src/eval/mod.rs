//! Evaluation: accuracy and per-class scores, the nearest-neighbor
//! baseline, self-check suites, and the experiment driver behind the CLI.

pub mod experiment;
pub mod knn;
pub mod metrics;
pub mod suites;

pub use experiment::{run_experiment, write_artifacts, ExperimentReport, RunConfig};
pub use knn::{select_k_by_cv, KnnModel};
pub use metrics::{accuracy, confusion_and_prf, ClassScores, ConfusionMatrix, PrfReport};
pub use suites::{all_passed, gradcheck_suite, verify_crypto_suite, CheckLine};
