//! Wire protocol, version 1.
//!
//! Every message is one JSON object. Server messages:
//!
//! ```json
//! {"v": 1, "run": "run-1", "seq": 12, "part": 0, "kind": "unit_created", "payload": {...}}
//! ```
//!
//! `seq` is the sequence number of the run event the message was derived
//! from; one event expands to one or more messages numbered by `part`.
//! Replies to queries and errors carry `"seq": null`. Client messages:
//!
//! ```json
//! {"v": 1, "kind": "user_message", "payload": {"text": "...", "refs": []}}
//! ```
//!
//! The schema is published at `schema/protocol.v1.schema.json`.

use serde::{Deserialize, Serialize};

use crate::backtrace::{JudgedCandidate, TraceResult};
use crate::model::{
    ActionCategory, ActionId, ActionKind, ActionParams, Actor, InfoKind, InformationUnit, QuotedRef, ResearchAction,
    RunState, RunStatus, UnitId,
};
use crate::persistence::{BodyStore, EventKind, RunEvent};
use crate::reduction::{NarrationPhase, ReductionRule};
use crate::span::TextSpan;

pub const PROTOCOL_VERSION: u32 = 1;
/// The published message schema.
pub const PROTOCOL_SCHEMA: &str = include_str!("../../schema/protocol.v1.schema.json");

/// Narration is streamed in pieces of about this many bytes.
const NARRATION_CHUNK: usize = 48;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    #[serde(flatten)]
    pub command: ClientCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ClientCommand {
    StartRun {
        text: String,
    },
    Subscribe {
        run: String,
        #[serde(default)]
        from: u64,
    },
    UserMessage {
        text: String,
        #[serde(default)]
        refs: Vec<QuotedRef>,
    },
    Interrupt,
    TraceRequest {
        unit: UnitId,
        span: TextSpan,
    },
    FocusQuery {
        action: ActionId,
    },
    InfoQuery {
        unit: UnitId,
    },
    Export,
}

/// Action fields shown when an action starts; narration follows as deltas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionView {
    pub id: ActionId,
    pub kind: ActionKind,
    pub category: ActionCategory,
    pub actor: Actor,
    pub milestone: bool,
    pub params: ActionParams,
    pub depends_on: Vec<UnitId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ActionView {
    pub fn of(action: &ResearchAction) -> Self {
        Self {
            id: action.id,
            kind: action.kind(),
            category: action.category(),
            actor: action.actor(),
            milestone: action.is_milestone(),
            params: action.params.clone(),
            depends_on: action.depends_on(),
            warnings: action.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitView {
    pub id: UnitId,
    pub kind: InfoKind,
    pub title: String,
    pub producer: ActionId,
    pub locator: Option<String>,
    pub minimized: bool,
    pub body: String,
}

impl UnitView {
    pub fn of(unit: &InformationUnit) -> Self {
        Self {
            id: unit.id,
            kind: unit.kind,
            title: unit.title.clone(),
            producer: unit.producer,
            locator: unit.locator.clone(),
            minimized: unit.minimized,
            body: unit.body.to_string(),
        }
    }
}

/// Everything the views need to link on one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusBundle {
    pub action: ResearchAction,
    pub category: ActionCategory,
    pub milestone: bool,
    pub unit: Option<UnitView>,
    /// Producers of the units this action consumed.
    pub predecessors: Vec<ActionId>,
    /// Actions that consumed this action's product.
    pub successors: Vec<ActionId>,
    pub previous: Option<ActionId>,
    pub next: Option<ActionId>,
    pub session: Option<usize>,
}

impl FocusBundle {
    pub fn build(state: &RunState, id: ActionId) -> Option<Self> {
        let action = state.action(id).ok()?;
        let unit = state.product_of(id).map(|u| UnitView::of(&state.units[u.index()]));
        Some(Self {
            action: action.clone(),
            category: action.category(),
            milestone: action.is_milestone(),
            unit,
            predecessors: state.dependency_predecessors(id).ok()?,
            successors: state.dependency_successors(id).ok()?,
            previous: id.0.checked_sub(1).map(ActionId),
            next: (id.index() + 1 < state.actions.len()).then_some(ActionId(id.0 + 1)),
            session: state.session_of(id),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Closed,
    Opened,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    ActionStarted {
        action: ActionView,
    },
    NarrationDelta {
        action: ActionId,
        phase: NarrationPhase,
        delta: String,
    },
    ActionCompleted {
        action: ActionId,
        unit: Option<UnitId>,
    },
    UnitCreated {
        unit: UnitView,
    },
    MinimizationApplied {
        rule: ReductionRule,
        units: Vec<UnitId>,
    },
    SessionBoundary {
        session: usize,
        boundary: Boundary,
        action: ActionId,
    },
    StatusChanged {
        from: RunStatus,
        to: RunStatus,
        reason: Option<String>,
    },
    TraceProgress {
        index: usize,
        total: usize,
        #[serde(flatten)]
        judged: JudgedCandidate,
    },
    TraceResult {
        result: TraceResult,
    },
    Error {
        code: String,
        message: String,
    },
    Ack {
        command: String,
        accepted: bool,
    },
    FocusBundle {
        bundle: FocusBundle,
    },
    InfoResult {
        unit: UnitView,
    },
    ExportResult {
        report: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub run: String,
    pub seq: Option<u64>,
    pub part: u32,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl ServerMessage {
    /// A reply or error, not derived from the event log.
    pub fn reply(run: impl Into<String>, body: ServerBody) -> Self {
        Self { v: PROTOCOL_VERSION, run: run.into(), seq: None, part: 0, body }
    }

    pub fn error(run: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Self::reply(run, ServerBody::Error { code: code.to_string(), message: message.into() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Splits narration at whitespace into pieces whose concatenation is `text`.
pub fn narration_chunks(text: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    for piece in text.split_inclusive(char::is_whitespace) {
        current.push_str(piece);
        if current.len() >= NARRATION_CHUNK {
            chunks.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Expands one run event into its server messages. `state` is the run state
/// right after the event (for bodies and minimized flags); `bodies` is the
/// body store.
pub fn expand_event(run: &str, event: &RunEvent, bodies: &BodyStore) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    let mut push = |body: ServerBody| {
        let part = out.len() as u32;
        out.push(ServerMessage { v: PROTOCOL_VERSION, run: run.to_string(), seq: Some(event.seq), part, body });
    };
    match &event.kind {
        EventKind::ActionAppended { action, previous_narration_after } => {
            if let (Some(text), Some(previous)) = (previous_narration_after, action.id.0.checked_sub(1)) {
                for delta in narration_chunks(text) {
                    push(ServerBody::NarrationDelta {
                        action: ActionId(previous),
                        phase: NarrationPhase::After,
                        delta,
                    });
                }
            }
            push(ServerBody::ActionStarted { action: ActionView::of(action) });
            for delta in narration_chunks(&action.narration_before) {
                push(ServerBody::NarrationDelta { action: action.id, phase: NarrationPhase::Before, delta });
            }
            if action.category().product_kind().is_none() {
                push(ServerBody::ActionCompleted { action: action.id, unit: None });
            }
        }
        EventKind::UnitRecorded { unit } => {
            let body = bodies.get(&unit.id).map(|b| b.to_string()).unwrap_or_default();
            push(ServerBody::UnitCreated {
                unit: UnitView {
                    id: unit.id,
                    kind: unit.kind,
                    title: unit.title.clone(),
                    producer: unit.producer,
                    locator: unit.locator.clone(),
                    minimized: false,
                    body,
                },
            });
            push(ServerBody::ActionCompleted { action: unit.producer, unit: Some(unit.id) });
        }
        EventKind::MinimizationApplied { rule, units } => {
            push(ServerBody::MinimizationApplied { rule: *rule, units: units.clone() });
        }
        EventKind::SessionClosed { session, end } => {
            push(ServerBody::SessionBoundary { session: *session, boundary: Boundary::Closed, action: *end });
        }
        EventKind::SessionOpened { session, start } => {
            push(ServerBody::SessionBoundary { session: *session, boundary: Boundary::Opened, action: *start });
        }
        EventKind::StatusChanged { from, to, reason } => {
            push(ServerBody::StatusChanged { from: *from, to: *to, reason: reason.clone() });
        }
        EventKind::TraceCompleted { result } => {
            let total = result.judged.len();
            for (index, judged) in result.judged.iter().enumerate() {
                push(ServerBody::TraceProgress { index, total, judged: judged.clone() });
            }
            push(ServerBody::TraceResult { result: result.clone() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_concatenate_to_the_original() {
        let text = "I will search for the YC W26 batch list and then read the most relevant directory page carefully.";
        let chunks = narration_chunks(text);
        assert!(chunks.len() > 1);
        assert_eq!(chunks.concat(), text);
        assert!(narration_chunks("").is_empty());
    }

    #[test]
    fn client_messages_round_trip() {
        let raw = r#"{"v":1,"kind":"interrupt"}"#;
        let msg: ClientMessage = serde_json::from_str(raw).unwrap();
        assert_eq!(msg.command, ClientCommand::Interrupt);
        let raw = r#"{"v":1,"kind":"subscribe","payload":{"run":"run-1","from":3}}"#;
        let msg: ClientMessage = serde_json::from_str(raw).unwrap();
        assert_eq!(msg.command, ClientCommand::Subscribe { run: "run-1".into(), from: 3 });
    }
}
