//! Turn-level reward calibration for multi-turn tool-use agents.
//!
//! The pipeline reads rollout logs ([`rollout`]), matches tool calls against
//! golden actions ([`argmatch`]), assigns each turn a reward tier
//! ([`tiers`]), turns rewards into group-relative advantages ([`advantage`]),
//! reports how those advantages line up with outcomes ([`diagnostics`]) and
//! recalibrates the tier rewards until they do ([`irc`]). [`synthenv`] is a
//! small seeded airline environment that produces rollouts for all of it.

pub mod advantage;
pub mod argmatch;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod irc;
pub mod rollout;
pub mod synthenv;
pub mod tiers;

pub use error::{Error, Result};
