//! Interactive deep-research orchestration.
//!
//! A research run is an ordered sequence of actions, each producing one
//! information unit. Progress-summary notes and user actions split the run into
//! sessions; intermediate material is minimized to pointer stubs once it has
//! been summarized, and any claim in a note can be traced back through its
//! dependency chain to the raw sources that support it.

pub mod backtrace;
pub mod bench;
pub mod model;
pub mod persistence;
pub mod reduction;
pub mod runtime;
pub mod service;
pub mod span;
pub mod tools;
