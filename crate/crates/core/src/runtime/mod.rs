//! The agent loop.
//!
//! Each step renders the run's context, asks the model gateway for one tool
//! call, validates it, executes it through the research tools and records the
//! resulting action and unit. Reductions follow from the recorded actions:
//! the post-process rule after every note, the session-boundary rule whenever
//! a milestone opens a session.
//!
//! Milestone enforcement: once `milestone_rounds` (N) agent actions have
//! passed since the last milestone, the next context carries a directive to
//! write a progress summary. If the agent still has not written one when the
//! count exceeds N, the runtime coerces the next decision into a
//! progress-summary note over every unit since the last milestone, so the
//! count never exceeds N + 1.
//!
//! Interrupts are checked between steps only. An in-flight step completes and
//! is recorded before the `UserInterrupt` milestone is appended.
//!
//! User messages embed quoted references below the message text:
//!
//! ```text
//! <message text>
//!
//! > [quote I3 120..168]
//! > the quoted text, one "> " prefix per line
//! ```

mod citation;
mod decision;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtrace::{trace, EvidenceJudge, TraceError, TraceRequest, TraceResult, DEFAULT_DEPTH_LIMIT};
use crate::model::{ActionId, ActionParams, InfoKind, QuotedRef, ResearchAction, RunState, RunStatus, UnitId};
use crate::persistence::{EventKind, PersistenceError, Recorder, UnitHeader};
use crate::reduction::{
    post_process_targets, render_context, session_boundary_targets, BlockContent, ReductionRule, RenderedContext,
};
use crate::tools::{
    GatewayError, GatewayRequest, ModelGateway, ResearchTools, SYSTEM_PROMPT_VERSION, TOOL_SCHEMA_VERSION,
};

pub use citation::{render_citation_superscripts, AnnotatedNote, CitationError};
pub use decision::{parse_decision, validate_decision, AgentDecision, DecidedAction, DecisionError};

/// Default milestone round threshold.
pub const DEFAULT_MILESTONE_ROUNDS: u32 = 8;
/// Default context budget in estimated tokens.
pub const DEFAULT_CONTEXT_BUDGET: usize = 128_000;
/// Body of the unit produced by a `UserInterrupt`.
pub const INTERRUPT_BODY: &str = "The user stopped the research.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Agent actions allowed since the last milestone before a progress
    /// summary is demanded.
    pub milestone_rounds: u32,
    pub context_budget: usize,
    /// `read_information` calls allowed within one step.
    pub max_reads_per_step: usize,
    pub depth_limit: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            milestone_rounds: DEFAULT_MILESTONE_ROUNDS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            max_reads_per_step: 3,
            depth_limit: DEFAULT_DEPTH_LIMIT,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("run does not accept this command while {0:?}")]
    NotAccepting(RunStatus),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("invalid reference: {0}")]
    InvalidRef(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StepOutcome {
    Appended {
        action: ActionId,
    },
    Finished {
        action: ActionId,
    },
    /// The run needs the user: repeated invalid decisions or gateway failure.
    Escalated {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RunOutcome {
    Finished,
    Interrupted,
    MaxSteps,
    AwaitingUser { reason: Option<String> },
}

/// Counters kept alongside a run. All values are deterministic for scripted
/// runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub gateway_calls: u64,
    pub invalid_decisions: u64,
    pub coerced_summaries: u64,
    pub reads: u64,
    /// Largest rendered-context token estimate handed to the gateway.
    pub peak_context_tokens: usize,
}

/// Cross-task handle that requests an interrupt at the next loop boundary.
#[derive(Debug, Clone, Default)]
pub struct InterruptHandle(Arc<AtomicBool>);

impl InterruptHandle {
    pub fn interrupt(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    fn take(&self) -> bool {
        self.0.swap(false, Ordering::SeqCst)
    }

    fn clear(&self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

struct Product {
    kind: InfoKind,
    title: String,
    body: String,
    locator: Option<String>,
}

/// One research run: state, recorder and the backends it talks to.
pub struct ResearchRun {
    recorder: Recorder,
    gateway: Arc<dyn ModelGateway>,
    tools: Arc<dyn ResearchTools>,
    config: RunConfig,
    interrupt: InterruptHandle,
    stats: RunStats,
    escalation: Option<String>,
}

impl ResearchRun {
    pub fn new(recorder: Recorder, gateway: Arc<dyn ModelGateway>, tools: Arc<dyn ResearchTools>) -> Self {
        let config = recorder.config().run.clone();
        Self {
            recorder,
            gateway,
            tools,
            config,
            interrupt: InterruptHandle::default(),
            stats: RunStats::default(),
            escalation: None,
        }
    }

    pub fn state(&self) -> &RunState {
        self.recorder.state()
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn recorder_mut(&mut self) -> &mut Recorder {
        &mut self.recorder
    }

    pub fn into_recorder(self) -> Recorder {
        self.recorder
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn status(&self) -> RunStatus {
        self.state().status
    }

    /// Why the run last escalated to the user, if it did.
    pub fn escalation(&self) -> Option<&str> {
        self.escalation.as_deref()
    }

    pub fn interrupt_handle(&self) -> InterruptHandle {
        self.interrupt.clone()
    }

    /// Requests an interrupt. Returns `false`, changing nothing, unless the
    /// run is `Running`.
    pub fn interrupt(&self) -> bool {
        if self.status() == RunStatus::Running {
            self.interrupt.interrupt();
            true
        } else {
            false
        }
    }

    /// The context the next decision would see, without step-local blocks.
    pub fn rendered_context(&self) -> RenderedContext {
        render_context(self.state(), self.config.context_budget)
    }

    /// Appends a user message (a milestone) and sets the run `Running`.
    pub fn user_message(&mut self, text: &str, refs: Vec<QuotedRef>) -> Result<ActionId, RuntimeError> {
        let status = self.status();
        if status == RunStatus::Running {
            return Err(RuntimeError::NotAccepting(status));
        }
        if text.trim().is_empty() && refs.is_empty() {
            return Err(RuntimeError::EmptyMessage);
        }
        let body = self.quote_body(text, &refs)?;
        let title = if text.trim().is_empty() { "Quoted reference".to_string() } else { text.trim().to_string() };
        let action = ResearchAction::new(
            self.state().next_action_id(),
            ActionParams::UserMessage { text: text.to_string(), refs },
        );
        let id = self.record(action, None, Some(Product { kind: InfoKind::User, title, body, locator: None }))?;
        self.interrupt.clear();
        self.escalation = None;
        self.set_status(RunStatus::Running, None)?;
        Ok(id)
    }

    fn quote_body(&self, text: &str, refs: &[QuotedRef]) -> Result<String, RuntimeError> {
        let mut body = text.trim().to_string();
        for r in refs {
            let unit = self.state().unit(r.unit).map_err(|e| RuntimeError::InvalidRef(e.to_string()))?;
            let quoted = r.span.slice(&unit.body).filter(|q| !q.is_empty()).ok_or_else(|| {
                RuntimeError::InvalidRef(format!("span {} is not a valid range of {}", r.span, r.unit))
            })?;
            if !body.is_empty() {
                body.push_str("\n\n");
            }
            body.push_str(&format!("> [quote {} {}]", r.unit, r.span));
            for line in quoted.lines() {
                body.push_str("\n> ");
                body.push_str(line);
            }
        }
        Ok(body)
    }

    /// Runs steps until the run finishes, escalates, is interrupted, or
    /// `max_steps` steps have been taken.
    pub async fn run(&mut self, max_steps: u64) -> Result<RunOutcome, RuntimeError> {
        let mut steps = 0;
        loop {
            match self.status() {
                RunStatus::Running => {}
                RunStatus::Finished => return Ok(RunOutcome::Finished),
                RunStatus::Idle | RunStatus::AwaitingUser => {
                    return Ok(RunOutcome::AwaitingUser { reason: self.escalation.clone() })
                }
            }
            if self.interrupt.take() {
                self.apply_interrupt()?;
                return Ok(RunOutcome::Interrupted);
            }
            if steps >= max_steps {
                return Ok(RunOutcome::MaxSteps);
            }
            self.step().await?;
            steps += 1;
        }
    }

    /// Appends the `UserInterrupt` milestone and hands control to the user.
    pub fn apply_interrupt(&mut self) -> Result<ActionId, RuntimeError> {
        let status = self.status();
        if status != RunStatus::Running {
            return Err(RuntimeError::NotAccepting(status));
        }
        let action = ResearchAction::new(self.state().next_action_id(), ActionParams::UserInterrupt);
        let product = Product {
            kind: InfoKind::User,
            title: "User interrupt".into(),
            body: INTERRUPT_BODY.into(),
            locator: None,
        };
        let id = self.record(action, None, Some(product))?;
        self.set_status(RunStatus::AwaitingUser, Some("interrupted by user".into()))?;
        Ok(id)
    }

    /// Takes one agent step.
    pub async fn step(&mut self) -> Result<StepOutcome, RuntimeError> {
        let status = self.status();
        if status != RunStatus::Running {
            return Err(RuntimeError::NotAccepting(status));
        }
        self.stats.steps += 1;
        let rounds = self.state().rounds_since_milestone;
        let n = self.config.milestone_rounds;
        if rounds > n {
            return self.coerced_summary(rounds).await;
        }
        let mut extra = Vec::new();
        if rounds >= n {
            extra.push(BlockContent::Directive {
                text: format!(
                    "{rounds} actions since the last milestone. Your next action must be create_note with \
                     progress_summary set to true, summarizing everything found since then with citations."
                ),
            });
        }
        let mut rejected = 0;
        let mut reads = 0;
        loop {
            let context = self.context_with(&extra);
            let call = match self.decide(context, None).await {
                Ok(call) => Ok(call),
                Err(GatewayError::Malformed(message)) => Err(format!("malformed response: {message}")),
                Err(e) => return self.escalate(format!("model gateway failed: {e}")),
            };
            let checked = call.and_then(|call| {
                let decision = parse_decision(&call).map_err(|e| e.to_string())?;
                if matches!(decision.action, DecidedAction::ReadInformation { .. })
                    && reads >= self.config.max_reads_per_step
                {
                    return Err(DecisionError::ReadLimit(self.config.max_reads_per_step).to_string());
                }
                let note = validate_decision(&decision, self.state()).map_err(|e| e.to_string())?;
                Ok((decision, note))
            });
            match checked {
                Ok((AgentDecision { action: DecidedAction::ReadInformation { unit }, .. }, _)) => {
                    reads += 1;
                    self.stats.reads += 1;
                    let body = self.state().units[unit.index()].body.to_string();
                    extra.push(BlockContent::Transient { unit, body });
                }
                Ok((decision, note)) => return self.execute(decision, note, Vec::new()).await,
                Err(message) => {
                    rejected += 1;
                    self.stats.invalid_decisions += 1;
                    if rejected >= 2 {
                        return self.escalate(format!("invalid decision after retry: {message}"));
                    }
                    extra.push(BlockContent::Notice {
                        text: format!("Your previous tool call was rejected: {message}. Issue a corrected tool call."),
                    });
                }
            }
        }
    }

    fn context_with(&mut self, extra: &[BlockContent]) -> RenderedContext {
        let mut context = render_context(self.state(), self.config.context_budget);
        for block in extra {
            context.push(block.clone());
        }
        self.stats.peak_context_tokens = self.stats.peak_context_tokens.max(context.token_estimate);
        context
    }

    async fn decide(
        &mut self,
        context: RenderedContext,
        forced_tool: Option<&str>,
    ) -> Result<crate::tools::ToolCall, GatewayError> {
        self.stats.gateway_calls += 1;
        let request = GatewayRequest::Decide {
            prompt_version: SYSTEM_PROMPT_VERSION.to_string(),
            tool_schema_version: TOOL_SCHEMA_VERSION.to_string(),
            context,
            forced_tool: forced_tool.map(str::to_string),
        };
        self.gateway.complete(&request).await
    }

    /// Forces a progress summary over every unit since the last milestone.
    /// The gateway is asked first, restricted to `create_note`; if it fails
    /// or returns an unusable note, a deterministic summary listing the units
    /// is written instead.
    async fn coerced_summary(&mut self, rounds: u32) -> Result<StepOutcome, RuntimeError> {
        self.stats.coerced_summaries += 1;
        let since = self.state().units_since_last_milestone();
        let directive = BlockContent::Directive {
            text: format!(
                "{rounds} actions since the last milestone. You must now call create_note with \
                 progress_summary set to true."
            ),
        };
        let context = self.context_with(&[directive]);
        let from_model = match self.decide(context, Some("create_note")).await {
            Ok(call) => parse_decision(&call).ok().and_then(|d| match &d.action {
                DecidedAction::CreateNote { .. } if validate_decision(&d, self.state()).is_ok() => Some(d),
                _ => None,
            }),
            Err(_) => None,
        };
        let decision = match from_model {
            Some(AgentDecision {
                narration_before,
                previous_outcome,
                action: DecidedAction::CreateNote { mut inputs, requirement, body, .. },
            }) => {
                inputs.extend(since.iter().copied());
                inputs.sort_unstable();
                inputs.dedup();
                AgentDecision {
                    narration_before,
                    previous_outcome,
                    action: DecidedAction::CreateNote { inputs, requirement, body, progress_summary: true },
                }
            }
            _ => self.synthesized_summary(rounds, &since),
        };
        let note = validate_decision(&decision, self.state()).expect("coerced summary cites existing units");
        let warning = format!("progress summary coerced after {rounds} actions without a milestone");
        self.execute(decision, note, vec![warning]).await
    }

    fn synthesized_summary(&self, rounds: u32, since: &[UnitId]) -> AgentDecision {
        let state = self.state();
        let mut body = format!("Progress summary recorded by the runtime after {rounds} actions without one.\n");
        for &id in since {
            let unit = &state.units[id.index()];
            body.push_str(&format!("\n- {}: {}[^{}]", unit.kind.label(), unit.title, id));
        }
        AgentDecision {
            narration_before: "Recording a progress summary of the work since the last milestone.".into(),
            previous_outcome: None,
            action: DecidedAction::CreateNote {
                inputs: since.to_vec(),
                requirement: "summarize progress since the last milestone".into(),
                body,
                progress_summary: true,
            },
        }
    }

    async fn execute(
        &mut self,
        decision: AgentDecision,
        note: Option<AnnotatedNote>,
        mut warnings: Vec<String>,
    ) -> Result<StepOutcome, RuntimeError> {
        let id = self.state().next_action_id();
        let AgentDecision { narration_before, previous_outcome, action } = decision;
        let (params, product) = match action {
            DecidedAction::WebSearch { query } => {
                let query = query.trim().to_string();
                let body = match self.tools.web_search(&query).await {
                    Ok(list) => list.canonical_text(),
                    Err(e) => format!("query: {query}\nsearch failed: {e}"),
                };
                let product = Product {
                    kind: InfoKind::Search,
                    title: format!("Search: {query}"),
                    body,
                    locator: Some(query.clone()),
                };
                (ActionParams::WebSearch { query }, Some(product))
            }
            DecidedAction::ScrapeWebpage { url } => {
                let url = url.trim().to_string();
                let (title, body) = match self.tools.scrape(&url).await {
                    Ok(page) => {
                        let title = page
                            .extracted_text
                            .lines()
                            .map(str::trim)
                            .find(|l| !l.is_empty())
                            .unwrap_or(&url)
                            .to_string();
                        (title, page.extracted_text)
                    }
                    Err(e) => (format!("fetch failed: {url}"), format!("could not fetch {url}: {e}")),
                };
                let product = Product { kind: InfoKind::Source, title, body, locator: Some(url.clone()) };
                (ActionParams::ScrapeWebpage { url }, Some(product))
            }
            DecidedAction::CreateNote { inputs, requirement, body, progress_summary } => {
                let note = note.unwrap_or(AnnotatedNote { body, unused: Vec::new() });
                warnings.extend(note.warnings());
                let title = if requirement.trim().is_empty() {
                    note.body.lines().next().unwrap_or("Note").to_string()
                } else {
                    requirement.trim().to_string()
                };
                let product = Product { kind: InfoKind::Processed, title, body: note.body, locator: None };
                (ActionParams::CreateNote { inputs, requirement, progress_summary }, Some(product))
            }
            DecidedAction::Finish => (ActionParams::Finish, None),
            DecidedAction::ReadInformation { .. } => unreachable!("reads are handled inside the step"),
        };
        let finish = matches!(params, ActionParams::Finish);
        let mut action = ResearchAction::new(id, params).with_narration(narration_before);
        action.warnings = warnings;
        self.record(action, previous_outcome, product)?;
        if finish {
            self.set_status(RunStatus::Finished, None)?;
            Ok(StepOutcome::Finished { action: id })
        } else {
            Ok(StepOutcome::Appended { action: id })
        }
    }

    /// Records an action and its product, then the session and reduction
    /// events that follow from it.
    fn record(
        &mut self,
        action: ResearchAction,
        previous_narration_after: Option<String>,
        product: Option<Product>,
    ) -> Result<ActionId, RuntimeError> {
        let id = action.id;
        let is_note = matches!(action.params, ActionParams::CreateNote { .. });
        let mut applied = self.recorder.commit(EventKind::ActionAppended { action, previous_narration_after })?;
        if let Some(p) = product {
            let unit = self.state().next_unit_id();
            self.recorder.put_body(unit, Arc::from(p.body.as_str()))?;
            let header = UnitHeader {
                id: unit,
                kind: p.kind,
                title: crate::model::truncate_title(&p.title),
                producer: id,
                locator: p.locator,
            };
            applied = self.recorder.commit(EventKind::UnitRecorded { unit: header })?;
        }
        let change = applied.session_change;
        if let Some((session, end)) = change.closed {
            self.recorder.commit(EventKind::SessionClosed { session, end })?;
        }
        if let Some((session, start)) = change.opened {
            self.recorder.commit(EventKind::SessionOpened { session, start })?;
        }
        if is_note {
            let units = post_process_targets(self.state()).expect("last action is a note");
            if !units.is_empty() {
                self.recorder.commit(EventKind::MinimizationApplied { rule: ReductionRule::PostProcess, units })?;
            }
        }
        if change.opened.is_some() {
            let units = session_boundary_targets(self.state()).expect("session opened by the last action");
            if !units.is_empty() {
                self.recorder.commit(EventKind::MinimizationApplied { rule: ReductionRule::SessionBoundary, units })?;
            }
        }
        Ok(id)
    }

    fn set_status(&mut self, to: RunStatus, reason: Option<String>) -> Result<(), RuntimeError> {
        let from = self.status();
        if from != to {
            self.recorder.commit(EventKind::StatusChanged { from, to, reason })?;
        }
        Ok(())
    }

    /// Hands a `Running` run back to the user, e.g. when a step budget is
    /// spent. No-op in any other status.
    pub fn pause(&mut self, reason: &str) -> Result<(), RuntimeError> {
        if self.status() == RunStatus::Running {
            self.escalate(reason.to_string())?;
        }
        Ok(())
    }

    fn escalate(&mut self, reason: String) -> Result<StepOutcome, RuntimeError> {
        self.escalation = Some(reason.clone());
        self.set_status(RunStatus::AwaitingUser, Some(reason.clone()))?;
        Ok(StepOutcome::Escalated { reason })
    }

    /// Traces a claim and records the result.
    pub async fn trace(
        &mut self,
        request: &TraceRequest,
        judge: &dyn EvidenceJudge,
    ) -> Result<TraceResult, RuntimeError> {
        let result = trace(self.state(), request, judge, self.config.depth_limit).await?;
        self.recorder.commit(EventKind::TraceCompleted { result: result.clone() })?;
        Ok(result)
    }
}
