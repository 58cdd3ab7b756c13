//! Continual learning by sequential MAP inference.
//!
//! Each task's training objective is the previous objective plus the new
//! task's negative log likelihood. Since previous data are gone, the
//! previous objective is replaced by a surrogate: a quadratic built from
//! exact Hessians (AQC), a diagonal Fisher or path-integral quadratic (EWC,
//! SI), or a small network fitted to the old loss surface (NC).
//!
//! The crate is layered bottom-up:
//!
//! * [`ad`]: reverse-mode differentiation over dense tensors, with exact
//!   Hessians from forward-over-reverse dual numbers.
//! * [`nn`]: dense swish networks and their parameter layout.
//! * [`objectives`]: likelihoods, penalties and the recursive loss.
//! * [`optim`]: Adam under a one-cycle schedule.
//! * [`methods`]: the continual-learning methods.
//! * [`tasks`]: datasets, splits and task sequences.
//! * [`harness`]: experiment configuration, tuning, persistence and reporting.

pub mod ad;
pub mod error;
pub mod harness;
pub mod methods;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};
