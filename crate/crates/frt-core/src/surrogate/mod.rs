//! Data-driven surrogates for per-bus ride-through probability: feature
//! construction, dataset handling, baseline regressors, a graph-convolution
//! network, and evaluation/reporting.

pub mod dataset;
pub mod features;
pub mod gbt;
pub mod linreg;
pub mod metrics;
pub mod tag;
pub mod train;

pub use dataset::{load_jsonl, save_jsonl, split_records, DatasetRecord};
pub use features::{build_features, Standardizer, FEATURE_NAMES, N_FEATURES};
pub use gbt::{Gbt, GbtConfig};
pub use linreg::LinReg;
pub use metrics::{r2, spearman};
pub use tag::{TagConfig, TagNet};
pub use train::{
    evaluate, train_model, EvalMetrics, GeneralizationReport, Model, ModelKind, TrainOptions,
};
