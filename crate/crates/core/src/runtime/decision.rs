//! Agent decisions: tool calls parsed and validated against the run state.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::citation::{render_citation_superscripts, AnnotatedNote, CitationError};
use crate::model::{RunState, UnitId};
use crate::tools::{validate_query, validate_url, ToolCall, ToolError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum DecidedAction {
    WebSearch {
        query: String,
    },
    ScrapeWebpage {
        url: String,
    },
    CreateNote {
        inputs: Vec<UnitId>,
        requirement: String,
        body: String,
        progress_summary: bool,
    },
    /// Transient dereference of a unit; not an action.
    ReadInformation {
        unit: UnitId,
    },
    Finish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub narration_before: String,
    /// Outcome remark attributed to the previous action.
    pub previous_outcome: Option<String>,
    pub action: DecidedAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid arguments for {tool}: {message}")]
    InvalidArguments { tool: String, message: String },
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("unit {0} does not exist")]
    UnknownUnit(UnitId),
    #[error("note body is empty")]
    EmptyNote,
    #[error(transparent)]
    Citation(#[from] CitationError),
    #[error("read_information limit of {0} per step reached")]
    ReadLimit(usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchArgs {
    narration: String,
    #[serde(default)]
    previous_outcome: Option<String>,
    query: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScrapeArgs {
    narration: String,
    #[serde(default)]
    previous_outcome: Option<String>,
    url: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteArgs {
    narration: String,
    #[serde(default)]
    previous_outcome: Option<String>,
    inputs: Vec<UnitId>,
    requirement: String,
    body: String,
    progress_summary: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadArgs {
    unit_id: UnitId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinishArgs {
    narration: String,
    #[serde(default)]
    previous_outcome: Option<String>,
}

fn args<T: DeserializeOwned>(call: &ToolCall) -> Result<T, DecisionError> {
    serde_json::from_value(call.arguments.clone())
        .map_err(|e| DecisionError::InvalidArguments { tool: call.name.clone(), message: e.to_string() })
}

fn outcome(text: Option<String>) -> Option<String> {
    text.map(|t| t.trim().to_string()).filter(|t| !t.is_empty())
}

/// Parses a tool call into a decision, checking only its shape.
pub fn parse_decision(call: &ToolCall) -> Result<AgentDecision, DecisionError> {
    let (narration_before, previous_outcome, action) = match call.name.as_str() {
        "web_search" => {
            let a: SearchArgs = args(call)?;
            (a.narration, a.previous_outcome, DecidedAction::WebSearch { query: a.query })
        }
        "scrape_webpage" => {
            let a: ScrapeArgs = args(call)?;
            (a.narration, a.previous_outcome, DecidedAction::ScrapeWebpage { url: a.url })
        }
        "create_note" => {
            let a: NoteArgs = args(call)?;
            let action = DecidedAction::CreateNote {
                inputs: a.inputs,
                requirement: a.requirement,
                body: a.body,
                progress_summary: a.progress_summary,
            };
            (a.narration, a.previous_outcome, action)
        }
        "read_information" => {
            let a: ReadArgs = args(call)?;
            (String::new(), None, DecidedAction::ReadInformation { unit: a.unit_id })
        }
        "finish" => {
            let a: FinishArgs = args(call)?;
            (a.narration, a.previous_outcome, DecidedAction::Finish)
        }
        other => return Err(DecisionError::UnknownTool(other.to_string())),
    };
    Ok(AgentDecision {
        narration_before: narration_before.trim().to_string(),
        previous_outcome: outcome(previous_outcome),
        action,
    })
}

/// Validates a parsed decision against `state`. Returns the annotated note
/// for `CreateNote` decisions.
pub fn validate_decision(decision: &AgentDecision, state: &RunState) -> Result<Option<AnnotatedNote>, DecisionError> {
    match &decision.action {
        DecidedAction::WebSearch { query } => {
            validate_query(query)?;
            Ok(None)
        }
        DecidedAction::ScrapeWebpage { url } => {
            validate_url(url)?;
            Ok(None)
        }
        DecidedAction::CreateNote { inputs, body, .. } => {
            if body.trim().is_empty() {
                return Err(DecisionError::EmptyNote);
            }
            for &id in inputs {
                state.unit(id).map_err(|_| DecisionError::UnknownUnit(id))?;
            }
            Ok(Some(render_citation_superscripts(body, inputs)?))
        }
        DecidedAction::ReadInformation { unit } => {
            state.unit(*unit).map_err(|_| DecisionError::UnknownUnit(*unit))?;
            Ok(None)
        }
        DecidedAction::Finish => Ok(None),
    }
}
