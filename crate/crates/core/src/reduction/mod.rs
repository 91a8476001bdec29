//! Research context reduction.
//!
//! Two rules keep the agent-facing context small while the store keeps every
//! body intact:
//!
//! 1. **Post-process rule.** Right after a `CreateNote`, every Search and
//!    Source unit created before the note's product is minimized.
//! 2. **Session-boundary rule.** When a new session opens, every unit whose
//!    producer is not a milestone is minimized, across all earlier sessions.
//!
//! Minimized units are rendered as [`PointerStub`]s; [`read_information`]
//! dereferences the pointer. Neither rule ever unminimizes a unit, and
//! milestone products are never touched.

mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionKind, InfoKind, ModelError, RunState, UnitId};

pub use render::{
    action_summary, estimate_tokens, render_context, BlockContent, ContextBlock, NarrationPhase, PointerStub,
    RenderedContext, STUB_NOTICE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionRule {
    PostProcess,
    SessionBoundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReductionError {
    #[error("post-process reduction requires the last action to be CreateNote")]
    WrongTrigger,
    #[error("session-boundary reduction requires a session opened by the last action")]
    NoOpenSession,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Units the post-process rule would minimize now, without mutating.
pub fn post_process_targets(state: &RunState) -> Result<Vec<UnitId>, ReductionError> {
    let last = state.last_action().ok_or(ReductionError::WrongTrigger)?;
    if last.kind() != ActionKind::CreateNote {
        return Err(ReductionError::WrongTrigger);
    }
    let note = state.product_of(last.id).ok_or(ReductionError::WrongTrigger)?;
    Ok(state
        .units
        .iter()
        .filter(|u| u.id < note && matches!(u.kind, InfoKind::Search | InfoKind::Source) && !u.minimized)
        .map(|u| u.id)
        .collect())
}

/// Units the session-boundary rule would minimize now, without mutating.
pub fn session_boundary_targets(state: &RunState) -> Result<Vec<UnitId>, ReductionError> {
    let last = state.last_action().ok_or(ReductionError::NoOpenSession)?;
    match state.open_session() {
        Some(open) if open.start == last.id => {}
        _ => return Err(ReductionError::NoOpenSession),
    }
    Ok(state
        .units
        .iter()
        .filter(|u| !u.minimized && !state.actions[u.producer.index()].is_milestone())
        .map(|u| u.id)
        .collect())
}

/// Applies the post-process rule; returns the newly minimized units.
pub fn apply_post_process_reduction(state: &mut RunState) -> Result<Vec<UnitId>, ReductionError> {
    let targets = post_process_targets(state)?;
    Ok(state.mark_minimized(&targets)?)
}

/// Applies the session-boundary rule; returns the newly minimized units.
pub fn apply_session_boundary_reduction(state: &mut RunState) -> Result<Vec<UnitId>, ReductionError> {
    let targets = session_boundary_targets(state)?;
    Ok(state.mark_minimized(&targets)?)
}

/// Full stored body of a unit, regardless of its minimized flag.
pub fn read_information(state: &RunState, unit: UnitId) -> Result<&str, ModelError> {
    state.unit(unit).map(|u| &*u.body)
}
