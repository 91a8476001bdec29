use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActionId, UnitId};

/// Longest title kept on a unit, in characters.
pub const MAX_TITLE_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    User,
    Search,
    Source,
    Processed,
}

impl InfoKind {
    /// Search, Source and User information are raw: they were not derived by
    /// the agent from other units.
    pub fn is_raw(self) -> bool {
        !matches!(self, InfoKind::Processed)
    }

    pub fn label(self) -> &'static str {
        match self {
            InfoKind::User => "User",
            InfoKind::Search => "Search",
            InfoKind::Source => "Source",
            InfoKind::Processed => "Processed",
        }
    }
}

/// One piece of accumulated research information.
///
/// The body is kept forever; `minimized` only controls whether the agent sees
/// the body or a pointer stub.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationUnit {
    pub id: UnitId,
    pub kind: InfoKind,
    pub title: String,
    pub body: Arc<str>,
    pub minimized: bool,
    pub producer: ActionId,
    /// URL for Source units, query string for Search units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
}

impl InformationUnit {
    pub fn new(
        id: UnitId,
        kind: InfoKind,
        title: impl Into<String>,
        body: impl Into<Arc<str>>,
        producer: ActionId,
        locator: Option<String>,
    ) -> Self {
        Self { id, kind, title: truncate_title(&title.into()), body: body.into(), minimized: false, producer, locator }
    }
}

/// Cuts `title` to [`MAX_TITLE_CHARS`] characters, marking the cut with `…`.
pub fn truncate_title(title: &str) -> String {
    let single_line = title.lines().next().unwrap_or("").trim();
    if single_line.chars().count() <= MAX_TITLE_CHARS {
        return single_line.to_string();
    }
    let mut out: String = single_line.chars().take(MAX_TITLE_CHARS - 1).collect();
    out.push('…');
    out
}
