//! Multi-set robust reinforcement learning on the point-mass navigation domain.
//!
//! The library implements SIRSA (System Identification and Risk-Sensitive
//! Adaptation): a recursive system-identification ensemble that filters an
//! uncertainty set over hidden environment parameters, combined with a
//! Monte-Carlo CVaR actor that acts robustly with respect to the remaining
//! uncertainty. Alongside SIRSA it provides the baselines it is compared
//! against (System ID, EPOpt, Set-EPOpt, WCPG, Set-WCPG, a context-conditioned
//! oracle, and a policy ensemble), an evaluation harness for worst-case
//! metrics over suites of uncertainty sets, and a config-driven experiment
//! runner.

pub mod agents;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rcmdp;
pub mod replay;
pub mod risk;
pub mod sysid;

pub use error::SirsaError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SirsaError>;
