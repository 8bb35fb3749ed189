//! Multi-agent fair environments.
//!
//! Three social-system simulators (loan pipeline, healthcare system and an
//! education-to-employment pipeline) share one contract: every agent sees an
//! observation matrix, emits an action, and each step produces raw reward and
//! fairness components that are aggregated into rates at the end of an episode.
//! [`trainer`] searches affine policies for all agents with a cross-entropy
//! method ranked by episode success.

pub mod config;
pub mod envs;
pub mod error;
pub mod framework;
pub mod gym;
pub mod policy;
pub mod population;
pub mod rng;
pub mod trainer;

pub use error::{MafeError, Result};
