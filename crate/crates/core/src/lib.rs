//! Self-supervised pre-training for time series by predicting statistical
//! functionals of masked frames.
//!
//! The pipeline frames a multi-channel signal into short fixed-length frames,
//! computes a set of per-frame functionals (moments, extrema, zero-crossing
//! rate and autocorrelation moments) as regression targets, encodes every
//! frame into an embedding, masks a random subset of embeddings and trains a
//! Transformer to predict the functionals of the masked frames from their
//! unmasked context.
//!
//! Modules:
//! - [`signal`]: signals, framing, normalization and length adjustment.
//! - [`functionals`]: the eleven functionals, target normalization and stores.
//! - [`masking`]: mask sampling and mask replacement.
//! - [`nn`]: reverse-mode autodiff, model stack, optimizers and schedules.
//! - [`pretrain`]: masked-prediction pre-training and collapse monitoring.
//! - [`finetune`]: fine-tuning, linear probing, metrics and cross-validation.
//! - [`data`]: file formats, manifests, configs and synthetic data.

pub mod data;
pub mod error;
pub mod finetune;
pub mod functionals;
pub mod masking;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
