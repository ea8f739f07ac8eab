//! Threshold-policy persistent monitoring on graphs: exact event-driven
//! simulation, event-driven gradient estimation (IPA), projected gradient
//! descent on the thresholds, a value-iteration baseline and the closed-form
//! one-agent-two-target analysis.

pub mod cli;
pub mod dp;
pub mod error;
pub mod gradcheck;
pub mod ipa;
pub mod optimizer;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
