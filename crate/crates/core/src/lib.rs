//! Finite-sum optimization lab.
//!
//! Implements SGD, random reshuffling (RR) and incremental gradient (IG) with
//! constant step sizes, the step-size rules and rate predictions that go with
//! them under the strong/weak growth conditions and the PL inequality, and
//! exact enumeration oracles that check the per-epoch deviation bounds at
//! small `n`.

pub mod constants;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod plot;
pub mod oracle;
pub mod problem;
pub mod theory;
pub mod vecops;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{FiniteSumProblem, LossModel, ParamVector, ProblemConstants, Sample};
