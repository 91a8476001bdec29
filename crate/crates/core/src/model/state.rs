use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionId, ActionKind, ActionParams, InfoKind, InformationUnit, ResearchAction, ResearchSession, UnitId};
use crate::backtrace::TraceResult;
use crate::span::TextSpan;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("action ordinal mismatch: expected {expected}, got {got}")]
    OrdinalMismatch { expected: ActionId, got: ActionId },
    #[error("unit ordinal mismatch: expected {expected}, got {got}")]
    UnitOrdinalMismatch { expected: UnitId, got: UnitId },
    #[error("{action} depends on unknown unit {unit}")]
    DanglingDependency { action: ActionId, unit: UnitId },
    #[error("{action} quotes {span} which is not a valid range of {unit}")]
    InvalidQuote { action: ActionId, unit: UnitId, span: TextSpan },
    #[error("{0} must produce an information unit")]
    MissingProduct(ActionId),
    #[error("{0} is administrative and cannot produce an information unit")]
    UnexpectedProduct(ActionId),
    #[error("{action} must produce a {expected:?} unit, got {got:?}")]
    ProductKindMismatch { action: ActionId, expected: InfoKind, got: InfoKind },
    #[error("unit {unit} names producer {claimed} but is produced by {action}")]
    ProducerMismatch { unit: UnitId, claimed: ActionId, action: ActionId },
    #[error("{0} is not a milestone action")]
    NotAMilestone(ActionId),
    #[error("{0} is not a milestone and no session is open")]
    OutsideSession(ActionId),
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Running,
    AwaitingUser,
    Finished,
}

/// Session bookkeeping performed by a milestone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionChange {
    /// `(session id, end action)` of the session that was closed.
    pub closed: Option<(usize, ActionId)>,
    /// `(session id, start action)` of the session that was opened.
    pub opened: Option<(usize, ActionId)>,
}

/// The action dependency graph, materialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDependencyGraph {
    pub nodes: Vec<ActionId>,
    /// `(a_t, a_t+1)` for consecutive actions.
    pub sequence_edges: Vec<(ActionId, ActionId)>,
    /// `(producer, consumer)` for every consumed unit.
    pub dependency_edges: Vec<(ActionId, ActionId)>,
}

/// Canonical in-memory state of one research run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub actions: Vec<ResearchAction>,
    pub units: Vec<InformationUnit>,
    pub sessions: Vec<ResearchSession>,
    pub dependency_edges: Vec<(ActionId, ActionId)>,
    /// Unit produced by each action, indexed by action ordinal.
    pub products: Vec<Option<UnitId>>,
    pub status: RunStatus,
    pub rounds_since_milestone: u32,
    #[serde(default)]
    pub traces: Vec<TraceResult>,
}

impl Default for RunState {
    fn default() -> Self {
        Self::new()
    }
}

impl RunState {
    pub fn new() -> Self {
        Self {
            actions: Vec::new(),
            units: Vec::new(),
            sessions: Vec::new(),
            dependency_edges: Vec::new(),
            products: Vec::new(),
            status: RunStatus::Idle,
            rounds_since_milestone: 0,
            traces: Vec::new(),
        }
    }

    pub fn next_action_id(&self) -> ActionId {
        ActionId(self.actions.len() as u64)
    }

    pub fn next_unit_id(&self) -> UnitId {
        UnitId(self.units.len() as u64)
    }

    pub fn action(&self, id: ActionId) -> Result<&ResearchAction, ModelError> {
        self.actions.get(id.index()).ok_or(ModelError::UnknownAction(id))
    }

    pub fn unit(&self, id: UnitId) -> Result<&InformationUnit, ModelError> {
        self.units.get(id.index()).ok_or(ModelError::UnknownUnit(id))
    }

    pub fn product_of(&self, action: ActionId) -> Option<UnitId> {
        self.products.get(action.index()).copied().flatten()
    }

    pub fn last_action(&self) -> Option<&ResearchAction> {
        self.actions.last()
    }

    pub fn open_session(&self) -> Option<&ResearchSession> {
        self.sessions.last().filter(|s| s.is_open())
    }

    pub fn session_of(&self, action: ActionId) -> Option<usize> {
        // The shared boundary belongs to the later session.
        self.sessions.iter().rev().find(|s| s.contains(action)).map(|s| s.id)
    }

    pub fn last_milestone(&self) -> Option<&ResearchAction> {
        self.actions.iter().rev().find(|a| a.is_milestone())
    }

    pub fn minimized_units(&self) -> Vec<UnitId> {
        self.units.iter().filter(|u| u.minimized).map(|u| u.id).collect()
    }

    /// Appends `action` and its product, enforcing the information growth
    /// rule, the product rule, dependency validity, and session bookkeeping.
    pub fn append_action(
        &mut self,
        action: ResearchAction,
        produced: Option<InformationUnit>,
    ) -> Result<SessionChange, ModelError> {
        let expected = self.next_action_id();
        if action.id != expected {
            return Err(ModelError::OrdinalMismatch { expected, got: action.id });
        }
        match (action.category().product_kind(), &produced) {
            (Some(_), None) => return Err(ModelError::MissingProduct(action.id)),
            (None, Some(_)) => return Err(ModelError::UnexpectedProduct(action.id)),
            (Some(kind), Some(unit)) => {
                let expected_unit = self.next_unit_id();
                if unit.id != expected_unit {
                    return Err(ModelError::UnitOrdinalMismatch { expected: expected_unit, got: unit.id });
                }
                if unit.kind != kind {
                    return Err(ModelError::ProductKindMismatch { action: action.id, expected: kind, got: unit.kind });
                }
                if unit.producer != action.id {
                    return Err(ModelError::ProducerMismatch {
                        unit: unit.id,
                        claimed: unit.producer,
                        action: action.id,
                    });
                }
            }
            (None, None) => {}
        }
        let depends_on = action.depends_on();
        for &unit in &depends_on {
            self.unit(unit).map_err(|_| ModelError::DanglingDependency { action: action.id, unit })?;
        }
        if let ActionParams::UserMessage { refs, .. } = &action.params {
            for r in refs {
                if !r.span.is_valid_in(&self.units[r.unit.index()].body) {
                    return Err(ModelError::InvalidQuote { action: action.id, unit: r.unit, span: r.span });
                }
            }
        }
        let milestone = action.is_milestone();
        if !milestone && self.open_session().is_none() {
            return Err(ModelError::OutsideSession(action.id));
        }

        let id = action.id;
        let is_user = action.actor() == super::Actor::User;
        for unit in depends_on {
            self.dependency_edges.push((self.units[unit.index()].producer, id));
        }
        self.products.push(produced.as_ref().map(|u| u.id));
        if let Some(unit) = produced {
            self.units.push(unit);
        }
        self.actions.push(action);

        if milestone {
            self.rounds_since_milestone = 0;
            self.close_and_open_session(id)
        } else {
            if !is_user {
                self.rounds_since_milestone += 1;
            }
            Ok(SessionChange::default())
        }
    }

    /// Ends the open session at `milestone` and opens the next one at the same
    /// action. A `Finish` milestone closes without opening.
    pub fn close_and_open_session(&mut self, milestone: ActionId) -> Result<SessionChange, ModelError> {
        let action = self.action(milestone)?;
        if !action.is_milestone() {
            return Err(ModelError::NotAMilestone(milestone));
        }
        let terminal = action.kind() == ActionKind::Finish;
        let mut change = SessionChange::default();
        if let Some(open) = self.sessions.last_mut().filter(|s| s.is_open()) {
            if open.start == milestone {
                return Ok(change);
            }
            open.end = Some(milestone);
            change.closed = Some((open.id, milestone));
        }
        if !terminal {
            let id = self.sessions.len();
            self.sessions.push(ResearchSession { id, start: milestone, end: None });
            change.opened = Some((id, milestone));
        }
        Ok(change)
    }

    /// Flags `ids` as minimized and returns those that were not already.
    pub fn mark_minimized(&mut self, ids: &[UnitId]) -> Result<Vec<UnitId>, ModelError> {
        for &id in ids {
            self.unit(id)?;
        }
        let mut newly = Vec::new();
        for &id in ids {
            let unit = &mut self.units[id.index()];
            if !unit.minimized {
                unit.minimized = true;
                newly.push(id);
            }
        }
        Ok(newly)
    }

    /// Producers of the units `action` consumed, ascending.
    pub fn dependency_predecessors(&self, action: ActionId) -> Result<Vec<ActionId>, ModelError> {
        let action = self.action(action)?;
        let mut preds: Vec<ActionId> =
            action.depends_on().into_iter().map(|u| self.units[u.index()].producer).collect();
        preds.sort_unstable();
        preds.dedup();
        Ok(preds)
    }

    /// Actions that consumed the product of `action`, ascending.
    pub fn dependency_successors(&self, action: ActionId) -> Result<Vec<ActionId>, ModelError> {
        self.action(action)?;
        let mut succ: Vec<ActionId> =
            self.dependency_edges.iter().filter(|(from, _)| *from == action).map(|(_, to)| *to).collect();
        succ.sort_unstable();
        succ.dedup();
        Ok(succ)
    }

    pub fn graph(&self) -> ActionDependencyGraph {
        let nodes: Vec<ActionId> = self.actions.iter().map(|a| a.id).collect();
        let sequence_edges = nodes.windows(2).map(|w| (w[0], w[1])).collect();
        ActionDependencyGraph { nodes, sequence_edges, dependency_edges: self.dependency_edges.clone() }
    }

    /// Units produced strictly after the most recent milestone.
    pub fn units_since_last_milestone(&self) -> Vec<UnitId> {
        let after = self.last_milestone().map(|a| a.id.0 as i64).unwrap_or(-1);
        self.units.iter().filter(|u| u.producer.0 as i64 > after).map(|u| u.id).collect()
    }

    /// The note that carries the run's answer: the latest progress-summary
    /// note, falling back to the latest note of any kind.
    pub fn final_note(&self) -> Option<&InformationUnit> {
        let note_of = |a: &ResearchAction| self.product_of(a.id).map(|u| &self.units[u.index()]);
        self.actions
            .iter()
            .rev()
            .find(|a| a.is_progress_summary())
            .and_then(note_of)
            .or_else(|| self.actions.iter().rev().find(|a| a.kind() == ActionKind::CreateNote).and_then(note_of))
    }

    /// Byte-stable serialization used for replay comparisons.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run state serializes")
    }
}
