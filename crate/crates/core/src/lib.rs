//! Robust multi-task gradient boosting.
//!
//! The crate provides decision-stump gradient boosting for multi-task data,
//! a gated ensemble that learns which tasks behave as outliers, the usual
//! single-task / pooled / task-as-feature baselines, a random-Fourier-feature
//! benchmark generator, and the cross-validated evaluation protocol used to
//! compare them.

pub mod boosting;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod model;
pub mod stump;
pub mod synth;

pub use boosting::{
    augment_task_onehot, fit_baseline, fit_gb, predict_gb, pool, BaselineKind, BaselineModel,
    ComponentEnsemble, GbParams, InitMode,
};
pub use dataset::MultiTaskDataset;
pub use error::{Error, Result};
pub use eval::{
    align_theta, critical_distance, grid_search_cv, metric, rank_models, split_train_test, FittedModel,
    MetricKind, MetricReport, ModelFamily, ModelGrid, RankSummary, Rounds,
};
pub use experiment::{run_experiment, DataSource, ExperimentConfig, ExperimentReport};
pub use loss::{loss_value, pseudo_residual, sigmoid, softmax, LossKind, ScoreMatrix};
pub use model::{fit_rmtgb, predict_rmtgb, RmtgbConfig, RmtgbModel};
pub use stump::{fit_stump, predict_stump, Stump};
