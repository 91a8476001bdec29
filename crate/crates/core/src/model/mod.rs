//! The research context model.
//!
//! A run is three nested levels:
//!
//! - **information units**: an append-only set that grows by at most one unit
//!   per action (user input, search results, scraped sources, agent notes);
//! - **research actions**: the linear sequence of typed operations taken by the
//!   agent or the user, each producing at most one unit and recording which
//!   earlier units it consumed;
//! - **research sessions**: contiguous, milestone-bounded ranges of actions.
//!
//! [`RunState`] owns all three together with the action dependency graph and
//! enforces their invariants on every append.

mod action;
mod session;
mod state;
mod unit;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use action::{derive_milestone, ActionCategory, ActionKind, ActionParams, Actor, QuotedRef, ResearchAction};
pub use session::ResearchSession;
pub use state::{ActionDependencyGraph, ModelError, RunState, RunStatus, SessionChange};
pub use unit::{truncate_title, InfoKind, InformationUnit, MAX_TITLE_CHARS};

/// Identifier of an information unit. Ids are dense and follow creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub u64);

/// Identifier of a research action; equal to its position in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u64);

impl UnitId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}
