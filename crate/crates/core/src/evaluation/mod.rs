//! Grouped cross-validation, ROC-AUC, contamination analysis and the
//! experiment driver behind the result tables.

pub mod analysis;
pub mod experiment;
pub mod folds;
pub mod metrics;

pub use analysis::{bin_index, binned_auc, quantile_edges, AnalysisRow, Bin, BinCurve};
pub use experiment::{
    fit_codebook, gmm_sweep, prepare_examples, run_experiment, Example, ExperimentConfig,
    ExperimentOutput, FvCache, Method, MethodRow, Prediction, Report, Selection, SweepPoint,
    REPORT_VERSION,
};
pub use folds::{assert_disjoint, grouped_kfold, FoldPlan};
pub use metrics::{mean, roc_auc, slope, spearman, std_dev};
