use serde::{Deserialize, Serialize};

use super::{ActionId, InfoKind, UnitId};
use crate::span::TextSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    UserMessage,
    UserInterrupt,
    WebSearch,
    ScrapeWebpage,
    CreateNote,
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCategory {
    UserInformation,
    SearchInformation,
    SourceInformation,
    ProcessedInformation,
    Administrative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Agent,
    User,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::UserMessage,
        ActionKind::UserInterrupt,
        ActionKind::WebSearch,
        ActionKind::ScrapeWebpage,
        ActionKind::CreateNote,
        ActionKind::Finish,
    ];

    pub fn category(self) -> ActionCategory {
        match self {
            ActionKind::UserMessage | ActionKind::UserInterrupt => ActionCategory::UserInformation,
            ActionKind::WebSearch => ActionCategory::SearchInformation,
            ActionKind::ScrapeWebpage => ActionCategory::SourceInformation,
            ActionKind::CreateNote => ActionCategory::ProcessedInformation,
            ActionKind::Finish => ActionCategory::Administrative,
        }
    }

    pub fn actor(self) -> Actor {
        match self.category() {
            ActionCategory::UserInformation => Actor::User,
            _ => Actor::Agent,
        }
    }
}

impl ActionCategory {
    /// The kind of unit an action of this category produces; `None` for
    /// administrative actions, which produce nothing.
    pub fn product_kind(self) -> Option<InfoKind> {
        match self {
            ActionCategory::UserInformation => Some(InfoKind::User),
            ActionCategory::SearchInformation => Some(InfoKind::Search),
            ActionCategory::SourceInformation => Some(InfoKind::Source),
            ActionCategory::ProcessedInformation => Some(InfoKind::Processed),
            ActionCategory::Administrative => None,
        }
    }
}

/// A quoted span of an earlier unit carried by a user message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuotedRef {
    pub unit: UnitId,
    pub span: TextSpan,
}

/// Kind-specific parameters. The action kind is the enum variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionParams {
    UserMessage {
        text: String,
        #[serde(default)]
        refs: Vec<QuotedRef>,
    },
    UserInterrupt,
    WebSearch {
        query: String,
    },
    ScrapeWebpage {
        url: String,
    },
    CreateNote {
        inputs: Vec<UnitId>,
        requirement: String,
        #[serde(default)]
        progress_summary: bool,
    },
    Finish,
}

impl ActionParams {
    pub fn kind(&self) -> ActionKind {
        match self {
            ActionParams::UserMessage { .. } => ActionKind::UserMessage,
            ActionParams::UserInterrupt => ActionKind::UserInterrupt,
            ActionParams::WebSearch { .. } => ActionKind::WebSearch,
            ActionParams::ScrapeWebpage { .. } => ActionKind::ScrapeWebpage,
            ActionParams::CreateNote { .. } => ActionKind::CreateNote,
            ActionParams::Finish => ActionKind::Finish,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchAction {
    pub id: ActionId,
    pub params: ActionParams,
    #[serde(default)]
    pub narration_before: String,
    #[serde(default)]
    pub narration_after: String,
    /// Non-fatal validation notes, e.g. a cited unit the note never marks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResearchAction {
    pub fn new(id: ActionId, params: ActionParams) -> Self {
        Self { id, params, narration_before: String::new(), narration_after: String::new(), warnings: Vec::new() }
    }

    pub fn with_narration(mut self, before: impl Into<String>) -> Self {
        self.narration_before = before.into();
        self
    }

    pub fn kind(&self) -> ActionKind {
        self.params.kind()
    }

    pub fn category(&self) -> ActionCategory {
        self.kind().category()
    }

    pub fn actor(&self) -> Actor {
        self.kind().actor()
    }

    pub fn is_milestone(&self) -> bool {
        derive_milestone(self)
    }

    pub fn is_progress_summary(&self) -> bool {
        matches!(self.params, ActionParams::CreateNote { progress_summary: true, .. })
    }

    /// Units this action consumed, ascending and deduplicated: a note's cited
    /// inputs or a user message's quoted references.
    pub fn depends_on(&self) -> Vec<UnitId> {
        let mut ids: Vec<UnitId> = match &self.params {
            ActionParams::CreateNote { inputs, .. } => inputs.clone(),
            ActionParams::UserMessage { refs, .. } => refs.iter().map(|r| r.unit).collect(),
            _ => Vec::new(),
        };
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Whether an action bounds research sessions: every user action, every
/// administrative action, and notes flagged as progress summaries.
pub fn derive_milestone(action: &ResearchAction) -> bool {
    match action.category() {
        ActionCategory::UserInformation | ActionCategory::Administrative => true,
        ActionCategory::ProcessedInformation => action.is_progress_summary(),
        ActionCategory::SearchInformation | ActionCategory::SourceInformation => false,
    }
}
