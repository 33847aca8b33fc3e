//! Correctness-prediction learning stack.

mod cv;
mod logistic;
mod metrics;
mod pca;
mod projection;
mod standardize;

pub use cv::{
    cv_fit, load_classifier, log_spaced_grid, persist_classifier, stratified_folds, CvConfig, CvReport,
    FittedClassifier, FoldReport, MODEL_MAGIC,
};
pub use logistic::{
    l1_logistic_fit, l1_logistic_fit_with, objective, smooth_gradient, SolverOptions,
    SparseLogisticModel,
};
pub use metrics::{accuracy, accuracy_at_half, auc};
pub use pca::{pca_fit, PcaModel};
pub use projection::{random_bank, random_unit_vectors};
pub use standardize::Standardizer;
