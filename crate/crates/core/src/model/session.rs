use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::ActionId;

/// A contiguous range of actions bounded by milestones. Adjacent sessions
/// share their boundary milestone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchSession {
    pub id: usize,
    pub start: ActionId,
    /// `None` while the session is open.
    pub end: Option<ActionId>,
}

impl ResearchSession {
    pub fn is_open(&self) -> bool {
        self.end.is_none()
    }

    /// Action ids covered by the session; an open session extends to
    /// `last_action`.
    pub fn action_ids(&self, last_action: ActionId) -> RangeInclusive<u64> {
        self.start.0..=self.end.unwrap_or(last_action).0
    }

    pub fn contains(&self, action: ActionId) -> bool {
        action >= self.start && self.end.is_none_or(|end| action <= end)
    }
}
