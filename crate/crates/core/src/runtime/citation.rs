//! Citation markers in note bodies.
//!
//! A note cites an earlier unit with the marker `[^I<id>]` placed right after
//! the sentence it supports, e.g. `Acme was founded in 2021.[^I3]`. The same
//! format is used on the wire and in exported reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::UnitId;
use crate::persistence::cited_units_in_order;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CitationError {
    #[error("marker [^{0}] refers to a unit that is not among the note's inputs")]
    UncitedMarker(UnitId),
}

/// A validated note body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedNote {
    pub body: String,
    /// Cited inputs that no marker refers to. Accepted, reported as warnings.
    pub unused: Vec<UnitId>,
}

impl AnnotatedNote {
    pub fn warnings(&self) -> Vec<String> {
        self.unused.iter().map(|id| format!("unused citation: {id} is an input but never marked in the body")).collect()
    }
}

/// Checks that every marker in `body` names a cited unit and reports cited
/// units without a marker.
pub fn render_citation_superscripts(body: &str, cited: &[UnitId]) -> Result<AnnotatedNote, CitationError> {
    let marked = cited_units_in_order(body);
    if let Some(stray) = marked.iter().find(|id| !cited.contains(id)) {
        return Err(CitationError::UncitedMarker(*stray));
    }
    let mut unused: Vec<UnitId> = cited.iter().copied().filter(|id| !marked.contains(id)).collect();
    unused.sort_unstable();
    unused.dedup();
    Ok(AnnotatedNote { body: body.to_string(), unused })
}
