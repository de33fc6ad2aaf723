//! Per-account SVM ensemble over temporal local distance features.

pub mod ensemble;
pub mod svm;

pub use ensemble::{
    calibrate_threshold, decide, distance_series, draw_window_sets, retrain, select_negatives, train_ensemble,
    train_ensemble_from_distances, train_with_windows, Decision, EnsembleConfig, SvmEnsemble, SvmModel, TrainStats,
    TrainedEnsemble,
};
pub use svm::{train_svm, LinearSvm, SmoConfig, SvmFit, SvmWarning, GENUINE, IMPOSTOR};
