//! Event-sourced run storage.
//!
//! Every state change of a run is an event. The [`Recorder`] validates it
//! through [`StateMachine::apply`] (the same transition [`replay`] uses) and
//! appends it durably before anything can observe the new state. Unit bodies
//! live in a separate write-once body store and are written before the event
//! that references them.
//!
//! On disk a run is a directory:
//!
//! ```text
//! <run>/config.json          config snapshot
//! <run>/events.jsonl         header line, then one RunEvent per line
//! <run>/bodies.jsonl         header line, then {"unit": n, "body": "..."} per line
//! <run>/snapshot-<seq>.json  state after event <seq>, every 100 events
//! ```

mod archive;
mod disk;
mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtrace::TraceResult;
use crate::model::{
    ActionId, InfoKind, InformationUnit, ModelError, ResearchAction, RunState, RunStatus, SessionChange, UnitId,
};
use crate::reduction::ReductionRule;

pub use archive::{ConfigSnapshot, Recorder, RunArchive};
pub use disk::{load_dir, replay_dir, BODIES_FORMAT, EVENTS_FORMAT, FORMAT_VERSION, SNAPSHOT_INTERVAL};
pub use report::{cited_units_in_order, export_report};

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("event sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt event {seq}: {reason}")]
    CorruptEvent { seq: u64, reason: String },
    #[error("body of unit {0} is already stored with different content")]
    BodyConflict(UnitId),
    #[error("run has not finished")]
    NotFinished,
}

impl From<std::io::Error> for PersistenceError {
    fn from(e: std::io::Error) -> Self {
        PersistenceError::StorageFailure(e.to_string())
    }
}

/// Unit metadata carried by [`EventKind::UnitRecorded`]; the body is in the
/// body store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitHeader {
    pub id: UnitId,
    pub kind: InfoKind,
    pub title: String,
    pub producer: ActionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
}

impl UnitHeader {
    pub fn of(unit: &InformationUnit) -> Self {
        Self {
            id: unit.id,
            kind: unit.kind,
            title: unit.title.clone(),
            producer: unit.producer,
            locator: unit.locator.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// An action was decided. Actions with a product take effect together
    /// with the following `UnitRecorded`.
    ActionAppended {
        action: ResearchAction,
        /// Outcome narration attributed to the previous action.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        previous_narration_after: Option<String>,
    },
    UnitRecorded {
        unit: UnitHeader,
    },
    MinimizationApplied {
        rule: ReductionRule,
        units: Vec<UnitId>,
    },
    SessionClosed {
        session: usize,
        end: ActionId,
    },
    SessionOpened {
        session: usize,
        start: ActionId,
    },
    StatusChanged {
        from: RunStatus,
        to: RunStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    TraceCompleted {
        result: TraceResult,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What applying one event changed, beyond the event itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Applied {
    pub session_change: SessionChange,
}

pub type BodyStore = BTreeMap<UnitId, Arc<str>>;

/// Applies events to a [`RunState`]. Shared by live recording and replay.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMachine {
    pub state: RunState,
    /// Action waiting for its product's `UnitRecorded`.
    pub staged: Option<ResearchAction>,
}

impl StateMachine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one event. On error the machine is left unchanged.
    pub fn apply(&mut self, event: &RunEvent, bodies: &BodyStore) -> Result<Applied, PersistenceError> {
        let seq = event.seq;
        let corrupt = |reason: String| PersistenceError::CorruptEvent { seq, reason };
        let model = |e: ModelError| PersistenceError::CorruptEvent { seq, reason: e.to_string() };
        let mut applied = Applied::default();
        match &event.kind {
            EventKind::ActionAppended { action, previous_narration_after } => {
                if self.staged.is_some() {
                    return Err(corrupt("action appended while another awaits its unit".into()));
                }
                if previous_narration_after.is_some() && self.state.actions.is_empty() {
                    return Err(corrupt("narration for a previous action on an empty run".into()));
                }
                let previous = self.state.actions.len().checked_sub(1);
                if action.category().product_kind().is_some() {
                    self.staged = Some(action.clone());
                } else {
                    applied.session_change = self.state.append_action(action.clone(), None).map_err(model)?;
                }
                if let (Some(text), Some(index)) = (previous_narration_after, previous) {
                    self.state.actions[index].narration_after = text.clone();
                }
            }
            EventKind::UnitRecorded { unit } => {
                let action =
                    self.staged.clone().ok_or_else(|| corrupt("unit recorded without a staged action".into()))?;
                let body = bodies.get(&unit.id).ok_or_else(|| corrupt(format!("body of {} missing", unit.id)))?;
                let mut product =
                    InformationUnit::new(unit.id, unit.kind, "", Arc::clone(body), unit.producer, unit.locator.clone());
                product.title = unit.title.clone();
                applied.session_change = self.state.append_action(action, Some(product)).map_err(model)?;
                self.staged = None;
            }
            EventKind::MinimizationApplied { units, .. } => {
                self.state.mark_minimized(units).map_err(model)?;
            }
            EventKind::SessionClosed { session, end } => {
                let ok = self.state.sessions.get(*session).is_some_and(|s| s.end == Some(*end));
                if !ok {
                    return Err(corrupt(format!("session {session} is not closed at {end}")));
                }
            }
            EventKind::SessionOpened { session, start } => {
                let ok = self.state.sessions.get(*session).is_some_and(|s| s.start == *start);
                if !ok {
                    return Err(corrupt(format!("session {session} does not start at {start}")));
                }
            }
            EventKind::StatusChanged { from, to, .. } => {
                if self.state.status != *from {
                    return Err(corrupt(format!("status is {:?}, event expects {from:?}", self.state.status)));
                }
                self.state.status = *to;
            }
            EventKind::TraceCompleted { result } => self.state.traces.push(result.clone()),
        }
        Ok(applied)
    }
}

/// Reconstructs a run's state from its archive. No tool or gateway calls are
/// made. An action still waiting for its unit at the end of the log is
/// dropped, as it never took effect.
pub fn replay(archive: &RunArchive) -> Result<RunState, PersistenceError> {
    replay_prefix(archive, archive.events.len())
}

/// State after the first `len` events.
pub fn replay_prefix(archive: &RunArchive, len: usize) -> Result<RunState, PersistenceError> {
    let mut machine = StateMachine::new();
    for (i, event) in archive.events.iter().take(len).enumerate() {
        if event.seq != i as u64 {
            return Err(PersistenceError::SequenceGap { expected: i as u64, got: event.seq });
        }
        machine.apply(event, &archive.bodies)?;
    }
    Ok(machine.state)
}
