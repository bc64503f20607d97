//! Memorization experiments, KNN-Shapley valuation, ROC analysis, per-difficulty
//! bucket tables and loss histograms.

mod buckets;
mod memorization;
mod roc;
mod shapley;
mod stats;

pub use buckets::{
    bucket_report, loss_histograms, min_max_normalize, write_bucket_csv, write_histogram_csv, BucketRow, LossHistogram,
};
pub use memorization::{
    holdout_indices, memorization_experiment, scenario_order, MemorizationConfig, MemorizationResult, Quartiles,
    Scenario, DEFAULT_HOLDOUT_FRACTION,
};
pub use roc::{roc_and_tpr, roc_curve, tpr_at_fpr, write_roc_csv, write_tpr_csv, RocCurve, TprAtFpr, FPR_GRID};
pub use shapley::{knn_shapley, knn_shapley_single, DEFAULT_K};
pub use stats::{mean_std, quantile, spearman, MeanStd};
