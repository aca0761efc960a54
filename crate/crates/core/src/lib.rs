//! Truth inference for weakly supervised entity matching.
//!
//! Labeling-function votes over candidate tuple pairs are consolidated into
//! match probabilities by an EM loop whose inference function is a
//! capacity-limited random forest. Transitivity can be enforced inside every
//! E-step, exactly for two-table tasks with duplicate-free tables and through
//! a learned approximator for single-table tasks. Two hypothesis tests ship
//! as diagnostics: duplicate-free table detection and labeling function
//! dependency detection.

pub mod data;
pub mod dupfree;
pub mod error;
pub mod forest;
pub mod harness;
pub mod imbalance;
pub mod lfdeps;
pub mod simple;
pub mod trans_exact;
pub mod trans_ml;

pub use error::{Error, Result};
