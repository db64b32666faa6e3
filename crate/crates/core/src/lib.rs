//! Exact design and evaluation of two-stage multi-arm studies with binary
//! outcomes and a shared control group.
//!
//! Two design families are provided: boundaries on the unconditional
//! success-count differences ([`binomial`]) and boundaries conditional on the
//! stage-wise success totals ([`fisher`]). Both are scored by the same exact
//! operating characteristics in [`oc`].

pub mod band;
pub mod binomial;
pub mod config;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod math;
pub mod oc;
pub mod optimize;
pub mod outcome;
pub mod pgrid;
pub mod report;

pub use config::{
    AllocationRatios, Control, EssModel, RunConfig, StageSizes, TrialConfig, Weights,
};
pub use error::{Error, Result};
pub use outcome::{OutcomePair, OutcomeSpace};
