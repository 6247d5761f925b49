//! Bayesian models of diachronic word-sense change.
//!
//! Two model families share one latent-state layout: DiSC, where word
//! distributions split into a sense effect and a time effect, and GASC (SCAN
//! when there is a single genre), where each sense-time pair has its own
//! word distribution. The crate covers the likelihood, MCMC samplers,
//! simulation from the prior, and evaluation of fitted chains.

pub mod config;
pub mod corpus;
pub mod elicit;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod samplers;
pub mod simulate;

pub use error::{Error, Result};
