//! Semi-supervised image classification on CPU.
//!
//! High-confidence unlabeled samples are trained on both clean strong views
//! and mixed pairs (regularized mixup), low-confidence samples are mixed with
//! high-confidence samples sharing their predicted class and trained against
//! soft targets with a squared error. Everything from the autodiff engine to
//! the experiment harness lives in this crate.

pub mod augment;
pub mod cli;
pub mod confidence;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
