//! Recursive evidence backtrace.
//!
//! Starting from a span selected in any unit, the engine asks an
//! [`EvidenceJudge`] whether each dependency predecessor's full body supports
//! the claim. Every positive answer becomes an [`EvidenceFinding`]; findings in
//! processed notes are traced again with the quoted evidence as the new claim,
//! until raw information (search results, scraped pages, user input) is
//! reached. Minimized flags are ignored: the judge always reads the store.
//!
//! Traversal is depth-first with predecessors in ascending ordinal, so the
//! result is a deterministic function of the state and the judge.

mod judge;

use futures::future::{join_all, BoxFuture};
use futures::FutureExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InfoKind, ModelError, RunState, UnitId};
use crate::span::TextSpan;

pub use judge::{strip_citation_markers, EvidenceJudge, JudgeError, ModelJudge, SubstringJudge};

/// Default maximum recursion depth.
pub const DEFAULT_DEPTH_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("span {span} is not a valid range of unit {unit}")]
    InvalidSpan { unit: UnitId, span: TextSpan },
    #[error("claim text does not match the selected span")]
    ClaimMismatch,
    #[error("depth limit must be at least 1")]
    InvalidDepth,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A claim selected by the user: a span of one unit's body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub unit: UnitId,
    pub span: TextSpan,
    pub claim_text: String,
}

impl TraceRequest {
    /// Builds a request from a span, reading the claim text from the store.
    pub fn from_span(state: &RunState, unit: UnitId, span: TextSpan) -> Result<Self, TraceError> {
        let body = &state.unit(unit)?.body;
        let claim = span.slice(body).ok_or(TraceError::InvalidSpan { unit, span })?;
        Ok(Self { unit, span, claim_text: claim.to_string() })
    }

    pub fn validate(&self, state: &RunState) -> Result<(), TraceError> {
        let body = &state.unit(self.unit)?.body;
        let claim = self.span.slice(body).ok_or(TraceError::InvalidSpan { unit: self.unit, span: self.span })?;
        if claim != self.claim_text {
            return Err(TraceError::ClaimMismatch);
        }
        Ok(())
    }
}

/// Why a branch of the trace stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    RawReached,
    NoEvidenceFound,
    DepthLimit,
}

/// One node of the evidence tree, stored as a parent-pointer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceFinding {
    /// Index of this finding in [`TraceResult::findings`].
    pub id: usize,
    /// Supported finding; `None` means the root claim.
    pub parent: Option<usize>,
    pub supporting_unit: UnitId,
    pub evidence_span: TextSpan,
    pub evidence_quote: String,
    pub depth: u32,
    /// Set on leaves only.
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Found { finding: usize },
    NotFound,
    Failed { error: String },
}

/// One judge call: which candidate was examined for which node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedCandidate {
    pub parent: Option<usize>,
    pub candidate: UnitId,
    #[serde(flatten)]
    pub outcome: JudgeOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceResult {
    pub root: TraceRequest,
    /// Set when the root claim itself is a leaf.
    pub root_terminal: Option<Terminal>,
    pub findings: Vec<EvidenceFinding>,
    /// Every judge call in traversal order.
    pub judged: Vec<JudgedCandidate>,
    pub depth_limit: u32,
}

impl TraceResult {
    pub fn children(&self, parent: Option<usize>) -> impl Iterator<Item = &EvidenceFinding> {
        self.findings.iter().filter(move |f| f.parent == parent)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &EvidenceFinding> {
        self.findings.iter().filter(|f| f.terminal.is_some())
    }

    pub fn max_depth(&self) -> u32 {
        self.findings.iter().map(|f| f.depth).max().unwrap_or(0)
    }
}

struct Tracer<'a> {
    state: &'a RunState,
    judge: &'a dyn EvidenceJudge,
    depth_limit: u32,
    findings: Vec<EvidenceFinding>,
    judged: Vec<JudgedCandidate>,
}

impl<'a> Tracer<'a> {
    /// Judges the predecessors of `unit` against `claim`, recursing into
    /// processed findings. Returns whether any evidence was found.
    fn expand(
        &mut self,
        parent: Option<usize>,
        unit: UnitId,
        claim: String,
        depth: u32,
    ) -> BoxFuture<'_, Result<bool, TraceError>> {
        async move {
            let state = self.state;
            let producer = state.unit(unit)?.producer;
            let candidates: Vec<UnitId> =
                state.dependency_predecessors(producer)?.into_iter().filter_map(|a| state.product_of(a)).collect();
            let judge = self.judge;
            let verdicts = join_all(candidates.iter().map(|&c| {
                let body = &*state.units[c.index()].body;
                let claim = claim.as_str();
                async move { judge.find_evidence(claim, body).await }
            }))
            .await;

            let mut found_any = false;
            for (candidate, verdict) in candidates.into_iter().zip(verdicts) {
                let supporting = &state.units[candidate.index()];
                let span = match verdict {
                    Ok(Some(span)) => match span.slice(&supporting.body) {
                        Some(_) => span,
                        None => {
                            self.judged.push(JudgedCandidate {
                                parent,
                                candidate,
                                outcome: JudgeOutcome::Failed { error: format!("judge returned invalid span {span}") },
                            });
                            continue;
                        }
                    },
                    Ok(None) => {
                        self.judged.push(JudgedCandidate { parent, candidate, outcome: JudgeOutcome::NotFound });
                        continue;
                    }
                    Err(e) => {
                        self.judged.push(JudgedCandidate {
                            parent,
                            candidate,
                            outcome: JudgeOutcome::Failed { error: e.to_string() },
                        });
                        continue;
                    }
                };
                found_any = true;
                let id = self.findings.len();
                let quote = span.slice(&supporting.body).unwrap_or_default().to_string();
                self.judged.push(JudgedCandidate { parent, candidate, outcome: JudgeOutcome::Found { finding: id } });
                self.findings.push(EvidenceFinding {
                    id,
                    parent,
                    supporting_unit: candidate,
                    evidence_span: span,
                    evidence_quote: quote.clone(),
                    depth: depth + 1,
                    terminal: None,
                });
                let terminal = if supporting.kind.is_raw() {
                    Some(Terminal::RawReached)
                } else if depth + 1 >= self.depth_limit {
                    Some(Terminal::DepthLimit)
                } else if self.expand(Some(id), candidate, quote, depth + 1).await? {
                    None
                } else {
                    Some(Terminal::NoEvidenceFound)
                };
                self.findings[id].terminal = terminal;
            }
            Ok(found_any)
        }
        .boxed()
    }
}

/// Traces the evidence behind `request` through the dependency graph.
pub async fn trace(
    state: &RunState,
    request: &TraceRequest,
    judge: &dyn EvidenceJudge,
    depth_limit: u32,
) -> Result<TraceResult, TraceError> {
    request.validate(state)?;
    if depth_limit == 0 {
        return Err(TraceError::InvalidDepth);
    }
    let mut tracer = Tracer { state, judge, depth_limit, findings: Vec::new(), judged: Vec::new() };
    let root_kind = state.unit(request.unit)?.kind;
    let root_terminal = if root_kind == InfoKind::Processed {
        if tracer.expand(None, request.unit, request.claim_text.clone(), 0).await? {
            None
        } else {
            Some(Terminal::NoEvidenceFound)
        }
    } else {
        Some(Terminal::RawReached)
    };
    Ok(TraceResult {
        root: request.clone(),
        root_terminal,
        findings: tracer.findings,
        judged: tracer.judged,
        depth_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionParams, InformationUnit, ResearchAction};

    fn push(s: &mut RunState, params: ActionParams, body: &str) -> UnitId {
        let id = s.next_action_id();
        let action = ResearchAction::new(id, params);
        let kind = action.category().product_kind().unwrap();
        let uid = s.next_unit_id();
        s.append_action(action, Some(InformationUnit::new(uid, kind, "t", body, id, None))).unwrap();
        uid
    }

    fn note(inputs: &[UnitId]) -> ActionParams {
        ActionParams::CreateNote { inputs: inputs.to_vec(), requirement: "r".into(), progress_summary: false }
    }

    fn claim(s: &RunState, unit: UnitId, text: &str) -> TraceRequest {
        let start = s.units[unit.index()].body.find(text).unwrap();
        TraceRequest::from_span(s, unit, TextSpan::at(start, text)).unwrap()
    }

    #[tokio::test]
    async fn single_hop_trace_reaches_raw() {
        let mut s = RunState::new();
        push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "q");
        let page = push(
            &mut s,
            ActionParams::ScrapeWebpage { url: "https://x".into() },
            "Intro. The founder studied in Beijing. Outro.",
        );
        let n = push(&mut s, note(&[page]), "Summary: The founder studied in Beijing.[^I1]");
        let req = claim(&s, n, "The founder studied in Beijing.[^I1]");
        let result = trace(&s, &req, &SubstringJudge, DEFAULT_DEPTH_LIMIT).await.unwrap();
        assert_eq!(result.findings.len(), 1);
        let f = &result.findings[0];
        assert_eq!(f.supporting_unit, page);
        assert_eq!(f.terminal, Some(Terminal::RawReached));
        assert_eq!(f.evidence_quote, "The founder studied in Beijing");
        assert_eq!(f.evidence_span.slice(&s.units[page.index()].body), Some(f.evidence_quote.as_str()));
        assert_eq!(result.root_terminal, None);
    }

    #[tokio::test]
    async fn no_evidence_is_a_root_leaf() {
        let mut s = RunState::new();
        push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "q");
        let page = push(&mut s, ActionParams::ScrapeWebpage { url: "https://x".into() }, "unrelated text");
        let n = push(&mut s, note(&[page]), "A new claim.");
        let result = trace(&s, &claim(&s, n, "A new claim."), &SubstringJudge, 3).await.unwrap();
        assert!(result.findings.is_empty());
        assert_eq!(result.root_terminal, Some(Terminal::NoEvidenceFound));
        assert_eq!(result.judged.len(), 1);
    }

    #[tokio::test]
    async fn raw_root_is_terminal() {
        let mut s = RunState::new();
        let u = push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "hello world");
        let result = trace(&s, &claim(&s, u, "hello"), &SubstringJudge, 3).await.unwrap();
        assert_eq!(result.root_terminal, Some(Terminal::RawReached));
        assert!(result.judged.is_empty());
    }

    #[tokio::test]
    async fn depth_limit_stops_recursion() {
        let mut s = RunState::new();
        push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "q");
        let page = push(&mut s, ActionParams::ScrapeWebpage { url: "https://x".into() }, "Fact alpha holds.");
        let a = push(&mut s, note(&[page]), "Fact alpha holds.");
        let b = push(&mut s, note(&[a]), "Fact alpha holds.");
        let r = trace(&s, &claim(&s, b, "Fact alpha holds."), &SubstringJudge, 1).await.unwrap();
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].terminal, Some(Terminal::DepthLimit));
        let r = trace(&s, &claim(&s, b, "Fact alpha holds."), &SubstringJudge, 2).await.unwrap();
        assert_eq!(r.findings.len(), 2);
        assert_eq!(r.findings[1].terminal, Some(Terminal::RawReached));
        assert_eq!(r.max_depth(), 2);
    }

    #[tokio::test]
    async fn minimized_units_are_still_read() {
        let mut s = RunState::new();
        push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "q");
        let page = push(&mut s, ActionParams::ScrapeWebpage { url: "https://x".into() }, "Deep fact.");
        let n = push(&mut s, note(&[page]), "Deep fact.");
        s.mark_minimized(&[page]).unwrap();
        let r = trace(&s, &claim(&s, n, "Deep fact."), &SubstringJudge, 3).await.unwrap();
        assert_eq!(r.findings[0].terminal, Some(Terminal::RawReached));
    }

    struct FailingJudge;

    #[async_trait::async_trait]
    impl EvidenceJudge for FailingJudge {
        async fn find_evidence(&self, claim: &str, body: &str) -> Result<Option<TextSpan>, JudgeError> {
            if body.starts_with("boom") {
                Err(JudgeError::Failure("backend exploded".into()))
            } else {
                SubstringJudge.find_evidence(claim, body).await
            }
        }
    }

    #[tokio::test]
    async fn judge_failure_does_not_stop_siblings() {
        let mut s = RunState::new();
        push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "q");
        let bad = push(&mut s, ActionParams::ScrapeWebpage { url: "https://x".into() }, "boom Fact.");
        let good = push(&mut s, ActionParams::ScrapeWebpage { url: "https://y".into() }, "Fact.");
        let n = push(&mut s, note(&[bad, good]), "Fact.");
        let r = trace(&s, &claim(&s, n, "Fact."), &FailingJudge, 3).await.unwrap();
        assert!(matches!(r.judged[0].outcome, JudgeOutcome::Failed { .. }));
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].supporting_unit, good);
    }

    #[tokio::test]
    async fn rejects_bad_requests() {
        let mut s = RunState::new();
        let u = push(&mut s, ActionParams::UserMessage { text: "q".into(), refs: vec![] }, "abc");
        assert!(matches!(TraceRequest::from_span(&s, u, TextSpan::new(0, 10)), Err(TraceError::InvalidSpan { .. })));
        let mut req = TraceRequest::from_span(&s, u, TextSpan::new(0, 2)).unwrap();
        assert_eq!(trace(&s, &req, &SubstringJudge, 0).await.unwrap_err(), TraceError::InvalidDepth);
        req.claim_text = "zz".into();
        assert_eq!(trace(&s, &req, &SubstringJudge, 1).await.unwrap_err(), TraceError::ClaimMismatch);
    }
}
