//! Effective robustness evaluation with single- and multi-ID baselines.
//!
//! A baseline predicts a model's out-of-distribution (OOD) accuracy from one
//! or more in-distribution (ID) accuracies through a linear function on the
//! logit scale. A model's effective robustness is how far its actual OOD
//! accuracy sits above that prediction, in percentage points.

pub mod math;
pub mod data;
pub mod evaluation;
pub mod synthetic;
pub mod labeler;
pub mod cli;
