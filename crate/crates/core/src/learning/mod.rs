//! Classifiers: linear SVM on Fisher vectors, a 1-D CNN on acceleration
//! windows, and logistic late fusion of their probabilities.

pub mod cnn;
pub mod fusion;
pub mod platt;
pub mod svm;

pub use cnn::{cnn_train, normalize_window, window_input, AccelCnn, CnnConfig, TrainTrace};
pub use fusion::{fuse_fit, FusionModel};
pub use platt::{platt_apply, platt_fit, platt_nll};
pub use svm::{fit_svm_cv, svm_objective, train_svm, LinearSvm, SvmConfig, SvmFit, LAMBDA_GRID};

/// Video probability given to segments without any selected trajectory.
pub const UNINFORMATIVE_PROBABILITY: f64 = 0.5;
