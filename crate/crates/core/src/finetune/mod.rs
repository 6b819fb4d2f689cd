//! Supervised fine-tuning, linear probing, metrics and grouped
//! cross-validation.

pub mod cv;
pub mod dataset;
pub mod metrics;
pub mod train;

pub use cv::{aggregate, cross_validate, grouped_kfold, grouped_split, Fold};
pub use dataset::{Labels, LabeledDataset};
pub use metrics::{uaf1, uar, ConfusionMatrix};
pub use train::{
    channel_dropout, class_weights, evaluate, finetune, linear_probe, weighted_ce, Criterion, FinetuneConfig, FitReport,
    ProbeConfig,
};
