//! Agent-facing rendering of a run.
//!
//! Blocks follow action order: each action contributes its `narration_before`,
//! then its product unit (full body, or a [`PointerStub`] when minimized),
//! then its `narration_after`. The runtime may append directive, notice and
//! transient blocks for the current step only.
//!
//! Token estimates use a fixed model-agnostic rule: one token per four
//! characters of a block's rendered text, rounded up, summed over blocks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{ActionId, ActionParams, Actor, InfoKind, InformationUnit, ResearchAction, RunState, UnitId};

/// Fixed text carried by every pointer stub.
pub const STUB_NOTICE: &str = "full text elided from context; call read_information with this unit id to retrieve it";

/// Deterministic token estimate: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Pointer that replaces a minimized unit's body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointerStub {
    pub unit: UnitId,
    pub kind: InfoKind,
    pub title: String,
    pub locator: Option<String>,
}

impl PointerStub {
    pub fn for_unit(unit: &InformationUnit) -> Self {
        Self { unit: unit.id, kind: unit.kind, title: unit.title.clone(), locator: unit.locator.clone() }
    }

    /// `[minimized <kind> <id>] <title> | <locator> | <notice>`; the locator
    /// segment is omitted when absent.
    pub fn render(&self) -> String {
        let mut out = format!("[minimized {} {}] {}", self.kind.label(), self.unit, self.title);
        if let Some(locator) = &self.locator {
            let _ = write!(out, " | {locator}");
        }
        let _ = write!(out, " | {STUB_NOTICE}");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrationPhase {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "block", rename_all = "snake_case")]
pub enum BlockContent {
    Narration {
        action: ActionId,
        actor: Actor,
        phase: NarrationPhase,
        text: String,
    },
    Full {
        unit: UnitId,
        kind: InfoKind,
        action: ActionId,
        header: String,
        body: String,
    },
    Stub {
        action: ActionId,
        stub: PointerStub,
    },
    /// Runtime instruction injected for the current step.
    Directive {
        text: String,
    },
    /// Validation feedback after a rejected decision.
    Notice {
        text: String,
    },
    /// Result of `read_information`, visible for the current step only.
    Transient {
        unit: UnitId,
        body: String,
    },
}

impl BlockContent {
    pub fn render(&self) -> String {
        match self {
            BlockContent::Narration { action, actor, phase, text } => {
                let who = match actor {
                    Actor::Agent => "agent",
                    Actor::User => "user",
                };
                match phase {
                    NarrationPhase::Before => format!("{action} {who}: {text}"),
                    NarrationPhase::After => format!("{action} {who} (outcome): {text}"),
                }
            }
            BlockContent::Full { header, body, .. } => format!("{header}\n{body}"),
            BlockContent::Stub { stub, .. } => stub.render(),
            BlockContent::Directive { text } => format!("[runtime directive] {text}"),
            BlockContent::Notice { text } => format!("[runtime notice] {text}"),
            BlockContent::Transient { unit, body } => format!("[read_information {unit}]\n{body}"),
        }
    }

    /// The action this block belongs to, if any.
    pub fn action(&self) -> Option<ActionId> {
        match self {
            BlockContent::Narration { action, .. }
            | BlockContent::Full { action, .. }
            | BlockContent::Stub { action, .. } => Some(*action),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub content: BlockContent,
    pub tokens: usize,
}

impl ContextBlock {
    pub fn new(content: BlockContent) -> Self {
        let tokens = estimate_tokens(&content.render());
        Self { content, tokens }
    }
}

/// The serialized context handed to the decision function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedContext {
    pub blocks: Vec<ContextBlock>,
    pub token_estimate: usize,
    pub budget: usize,
    pub over_budget: bool,
}

impl RenderedContext {
    pub fn push(&mut self, content: BlockContent) {
        let block = ContextBlock::new(content);
        self.token_estimate += block.tokens;
        self.blocks.push(block);
        self.over_budget = self.token_estimate > self.budget;
    }

    /// Plain-text form sent to a model.
    pub fn to_text(&self) -> String {
        self.blocks.iter().map(|b| b.content.render()).collect::<Vec<_>>().join("\n\n")
    }

    /// Ids of agent actions visible in the context, ascending.
    pub fn agent_actions(&self) -> Vec<ActionId> {
        let mut ids: Vec<ActionId> = self
            .blocks
            .iter()
            .filter_map(|b| match &b.content {
                BlockContent::Narration { action, actor: Actor::Agent, .. } => Some(*action),
                BlockContent::Full { action, kind, .. } if *kind != InfoKind::User => Some(*action),
                BlockContent::Stub { action, stub } if stub.kind != InfoKind::User => Some(*action),
                _ => None,
            })
            .collect();
        ids.dedup();
        ids
    }

    /// Body of the first user unit, which is the research request.
    pub fn initial_request(&self) -> Option<&str> {
        self.blocks.iter().find_map(|b| match &b.content {
            BlockContent::Full { kind: InfoKind::User, body, .. } => Some(body.as_str()),
            _ => None,
        })
    }
}

/// One-line description of an action and its parameters.
pub fn action_summary(action: &ResearchAction) -> String {
    match &action.params {
        ActionParams::UserMessage { refs, .. } if refs.is_empty() => "user_message".to_string(),
        ActionParams::UserMessage { refs, .. } => {
            let ids: Vec<String> = refs.iter().map(|r| r.unit.to_string()).collect();
            format!("user_message quotes={}", ids.join(","))
        }
        ActionParams::UserInterrupt => "user_interrupt".to_string(),
        ActionParams::WebSearch { query } => format!("web_search query={query:?}"),
        ActionParams::ScrapeWebpage { url } => format!("scrape_webpage url={url}"),
        ActionParams::CreateNote { inputs, requirement, progress_summary } => {
            let ids: Vec<String> = inputs.iter().map(|u| u.to_string()).collect();
            let mut s = format!("create_note inputs={} requirement={requirement:?}", ids.join(","));
            if *progress_summary {
                s.push_str(" progress_summary");
            }
            s
        }
        ActionParams::Finish => "finish".to_string(),
    }
}

fn unit_header(unit: &InformationUnit, action: &ResearchAction) -> String {
    let mut header =
        format!("[{} {} | {} {}] {}", unit.kind.label(), unit.id, action.id, action_summary(action), unit.title);
    if let Some(locator) = &unit.locator {
        let _ = write!(header, " | {locator}");
    }
    header
}

/// Renders `state` for the agent: minimized units become stubs, everything
/// else is shown in full. Over-budget contexts are flagged, never truncated.
pub fn render_context(state: &RunState, budget: usize) -> RenderedContext {
    let mut ctx = RenderedContext { blocks: Vec::new(), token_estimate: 0, budget, over_budget: false };
    for action in &state.actions {
        let actor = action.actor();
        if !action.narration_before.is_empty() {
            ctx.push(BlockContent::Narration {
                action: action.id,
                actor,
                phase: NarrationPhase::Before,
                text: action.narration_before.clone(),
            });
        }
        if let Some(unit_id) = state.product_of(action.id) {
            let unit = &state.units[unit_id.index()];
            if unit.minimized {
                ctx.push(BlockContent::Stub { action: action.id, stub: PointerStub::for_unit(unit) });
            } else {
                ctx.push(BlockContent::Full {
                    unit: unit.id,
                    kind: unit.kind,
                    action: action.id,
                    header: unit_header(unit, action),
                    body: unit.body.to_string(),
                });
            }
        }
        if !action.narration_after.is_empty() {
            ctx.push(BlockContent::Narration {
                action: action.id,
                actor,
                phase: NarrationPhase::After,
                text: action.narration_after.clone(),
            });
        }
    }
    ctx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionParams;

    fn state_with_source(minimized: bool) -> RunState {
        let mut s = RunState::new();
        let a0 = ResearchAction::new(ActionId(0), ActionParams::UserMessage { text: "q".into(), refs: vec![] });
        s.append_action(a0, Some(InformationUnit::new(UnitId(0), InfoKind::User, "q", "q", ActionId(0), None)))
            .unwrap();
        let a1 = ResearchAction::new(ActionId(1), ActionParams::ScrapeWebpage { url: "https://ex.com/a".into() })
            .with_narration("reading the page");
        let page = "secret page body ".repeat(20);
        s.append_action(
            a1,
            Some(InformationUnit::new(
                UnitId(1),
                InfoKind::Source,
                "Example page",
                page.as_str(),
                ActionId(1),
                Some("https://ex.com/a".into()),
            )),
        )
        .unwrap();
        if minimized {
            s.mark_minimized(&[UnitId(1)]).unwrap();
        }
        s
    }

    #[test]
    fn identity_rendering_sums_blocks() {
        let s = state_with_source(false);
        let ctx = render_context(&s, 10_000);
        assert!(ctx.blocks.iter().all(|b| !matches!(b.content, BlockContent::Stub { .. })));
        assert_eq!(ctx.token_estimate, ctx.blocks.iter().map(|b| b.tokens).sum::<usize>());
        assert_eq!(ctx.blocks.len(), 3);
        assert!(!ctx.over_budget);
    }

    #[test]
    fn stub_shows_url_and_title_only() {
        let s = state_with_source(true);
        let ctx = render_context(&s, 10_000);
        let stub = ctx.blocks.iter().find(|b| matches!(b.content, BlockContent::Stub { .. })).unwrap();
        let text = stub.content.render();
        assert_eq!(text, format!("[minimized Source I1] Example page | https://ex.com/a | {STUB_NOTICE}"));
        assert!(!text.contains("secret"));
        let full = render_context(&state_with_source(false), 10_000);
        assert!(ctx.token_estimate < full.token_estimate);
    }

    #[test]
    fn over_budget_is_flagged_not_truncated() {
        let s = state_with_source(false);
        let ctx = render_context(&s, 5);
        assert!(ctx.over_budget);
        assert_eq!(ctx.blocks.len(), 3);
    }

    #[test]
    fn estimator_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("éééé"), 1);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = state_with_source(true);
        assert_eq!(render_context(&s, 100), render_context(&s, 100));
        assert_eq!(render_context(&s, 100).agent_actions(), vec![ActionId(1)]);
        assert_eq!(render_context(&s, 100).initial_request(), Some("q"));
    }
}
