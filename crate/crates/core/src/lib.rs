//! Temporal-spatial attention network for DoS-attack detection on
//! NSL-KDD-style connection records: a small reverse-mode autodiff
//! engine, the model itself, preprocessing, multi-task training with
//! self-supervised pretraining, and evaluation.

pub mod autodiff;
pub mod cli;
pub mod container;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pretrain;
pub mod trainer;

pub use error::{Result, TsanError};
