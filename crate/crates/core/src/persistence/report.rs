//! Final report export.
//!
//! The report is Markdown: the research request, the body of the final
//! summary note with its `[^I<n>]` markers left in place, and a footnote
//! appendix with one entry per distinct cited unit in order of first
//! appearance:
//!
//! ```text
//! [^I3]: <title> (<locator>)
//! ```

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;

use super::{replay, PersistenceError, RunArchive};
use crate::model::{RunStatus, UnitId};

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\^I(\d+)\]").expect("valid regex"));

/// Distinct unit ids cited in `body`, in order of first appearance.
pub fn cited_units_in_order(body: &str) -> Vec<UnitId> {
    let mut seen = Vec::new();
    for cap in MARKER.captures_iter(body) {
        if let Ok(n) = cap[1].parse::<u64>() {
            let id = UnitId(n);
            if !seen.contains(&id) {
                seen.push(id);
            }
        }
    }
    seen
}

pub fn export_report(archive: &RunArchive) -> Result<String, PersistenceError> {
    let state = replay(archive)?;
    if state.status != RunStatus::Finished {
        return Err(PersistenceError::NotFinished);
    }
    let request = state.units.first().map(|u| u.body.to_string()).unwrap_or_default();
    let mut out = String::from("# Research report\n\n");
    let _ = writeln!(out, "> {}\n", request.trim().replace('\n', "\n> "));
    let Some(note) = state.final_note() else {
        out.push_str("_The run finished without a summary note._\n");
        return Ok(out);
    };
    out.push_str(note.body.trim_end());
    out.push('\n');
    let cited = cited_units_in_order(&note.body);
    if !cited.is_empty() {
        out.push_str("\n## Sources\n\n");
        for id in cited {
            match state.unit(id) {
                Ok(unit) => {
                    let _ = write!(out, "[^{id}]: {}", unit.title);
                    if let Some(locator) = &unit.locator {
                        let _ = write!(out, " ({locator})");
                    }
                    out.push('\n');
                }
                Err(_) => {
                    let _ = writeln!(out, "[^{id}]: unknown unit");
                }
            }
        }
    }
    Ok(out)
}
