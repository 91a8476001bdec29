//! In-process engine hosting concurrent runs.
//!
//! Each run lives on its own task together with a command queue. The task is
//! the run's only writer: steps, user messages and traces are serialized on
//! it, and commands are picked up between steps. Interrupts bypass the queue
//! through the run's [`InterruptHandle`] so they are seen at the next step
//! boundary even while a step is in flight.
//!
//! After every committed event the recorder publishes the event and a state
//! snapshot. Subscribers read published history and attach to the live
//! broadcast under one lock, so a subscription from sequence `k` yields
//! exactly the events numbered `k` and up, without gaps or duplicates.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use futures::Stream;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};

use super::protocol::{expand_event, FocusBundle, ServerMessage, UnitView};
use crate::backtrace::{EvidenceJudge, TraceError, TraceRequest, TraceResult};
use crate::model::{ActionId, QuotedRef, RunState, RunStatus, UnitId};
use crate::persistence::{export_report, ConfigSnapshot, PersistenceError, Recorder, RunArchive, RunEvent};
use crate::runtime::{InterruptHandle, ResearchRun, RunConfig, RuntimeError};
use crate::span::TextSpan;
use crate::tools::{ModelGateway, ResearchTools};

/// Events a subscriber may fall behind before it is dropped.
pub const SUBSCRIBER_BUFFER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub run: RunConfig,
    /// Runs not yet finished that the engine hosts at once.
    pub max_active_runs: usize,
    /// Agent steps a run may take per user message before it pauses.
    pub max_steps_per_turn: u64,
    /// Archive runs under `<root>/<run id>/` when set; in memory otherwise.
    pub archive_root: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { run: RunConfig::default(), max_active_runs: 16, max_steps_per_turn: 200, archive_root: None }
    }
}

/// The model, tools and judge shared by every run of an engine.
#[derive(Clone)]
pub struct Backends {
    pub gateway: Arc<dyn ModelGateway>,
    pub tools: Arc<dyn ResearchTools>,
    pub judge: Arc<dyn EvidenceJudge>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("engine is at capacity with {0} active runs")]
    EngineBusy(usize),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
    #[error("run is {0:?} and does not accept this command")]
    NotAccepting(RunStatus),
    #[error("run has not finished")]
    NotFinished,
    #[error("run task has stopped")]
    RunStopped,
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

impl ServiceError {
    /// Stable error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::EngineBusy(_) => "engine_busy",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::UnknownRun(_) => "unknown_run",
            ServiceError::UnknownAction(_) => "unknown_action",
            ServiceError::UnknownUnit(_) => "unknown_unit",
            ServiceError::NotAccepting(_) => "not_accepting",
            ServiceError::NotFinished => "not_finished",
            ServiceError::RunStopped => "run_stopped",
            ServiceError::Persistence(_) => "storage_failure",
        }
    }
}

impl From<RuntimeError> for ServiceError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::NotAccepting(status) => ServiceError::NotAccepting(status),
            RuntimeError::Persistence(p) => ServiceError::Persistence(p),
            other => ServiceError::InvalidRequest(other.to_string()),
        }
    }
}

impl From<TraceError> for ServiceError {
    fn from(e: TraceError) -> Self {
        ServiceError::InvalidRequest(e.to_string())
    }
}

enum Command {
    UserMessage { text: String, refs: Vec<QuotedRef>, reply: oneshot::Sender<Result<ActionId, ServiceError>> },
    Trace { unit: UnitId, span: TextSpan, reply: oneshot::Sender<Result<TraceResult, ServiceError>> },
}

struct Published {
    archive: RunArchive,
    state: Arc<RunState>,
    /// Set when the run task stopped on an unrecoverable error.
    failure: Option<String>,
}

/// What a run has made observable so far.
struct PublishedLog {
    inner: Mutex<Published>,
    live: broadcast::Sender<RunEvent>,
}

impl PublishedLog {
    fn new(archive: RunArchive) -> Self {
        let (live, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        Self { inner: Mutex::new(Published { archive, state: Arc::new(RunState::new()), failure: None }), live }
    }

    fn lock(&self) -> MutexGuard<'_, Published> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, event: &RunEvent, state: &RunState) {
        let mut published = self.lock();
        if let crate::persistence::EventKind::UnitRecorded { unit } = &event.kind {
            if let Ok(u) = state.unit(unit.id) {
                published.archive.bodies.insert(unit.id, Arc::clone(&u.body));
            }
        }
        published.archive.events.push(event.clone());
        published.state = Arc::new(state.clone());
        // No receivers is fine; history stays in the archive.
        let _ = self.live.send(event.clone());
    }

    fn fail(&self, message: String) {
        self.lock().failure = Some(message);
    }
}

struct RunSlot {
    log: Arc<PublishedLog>,
    commands: mpsc::UnboundedSender<Command>,
    interrupt: InterruptHandle,
}

struct EngineInner {
    config: EngineConfig,
    backends: Backends,
    runs: Mutex<HashMap<String, Arc<RunSlot>>>,
    started: Mutex<u64>,
}

/// Cheap to clone; all clones share the same runs.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<EngineInner>,
}

impl Engine {
    pub fn new(config: EngineConfig, backends: Backends) -> Self {
        Self {
            inner: Arc::new(EngineInner { config, backends, runs: Mutex::new(HashMap::new()), started: Mutex::new(0) }),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    fn slot(&self, run: &str) -> Result<Arc<RunSlot>, ServiceError> {
        let runs = self.inner.runs.lock().unwrap_or_else(|e| e.into_inner());
        runs.get(run).cloned().ok_or_else(|| ServiceError::UnknownRun(run.to_string()))
    }

    /// Starts a run with `text` as its initial request and returns its id.
    /// Must be called within a tokio runtime.
    pub fn start_run(&self, text: &str) -> Result<String, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::InvalidRequest("initial request is empty".into()));
        }
        let mut runs = self.inner.runs.lock().unwrap_or_else(|e| e.into_inner());
        let active = runs.values().filter(|slot| slot.log.lock().state.status != RunStatus::Finished).count();
        if active >= self.inner.config.max_active_runs {
            return Err(ServiceError::EngineBusy(active));
        }
        let id = {
            let mut started = self.inner.started.lock().unwrap_or_else(|e| e.into_inner());
            *started += 1;
            format!("run-{started}")
        };
        let snapshot = ConfigSnapshot::new(self.inner.config.run.clone());
        let mut recorder = match &self.inner.config.archive_root {
            Some(root) => Recorder::create_dir(&root.join(&id), id.clone(), snapshot)?,
            None => Recorder::in_memory(id.clone(), snapshot),
        };
        let log = Arc::new(PublishedLog::new(recorder.archive().clone()));
        let listener_log = Arc::clone(&log);
        recorder.add_listener(move |event, state| listener_log.publish(event, state));

        let backends = &self.inner.backends;
        let mut run = ResearchRun::new(recorder, Arc::clone(&backends.gateway), Arc::clone(&backends.tools));
        run.user_message(text, Vec::new())?;
        let (commands, queue) = mpsc::unbounded_channel();
        let slot = Arc::new(RunSlot { log: Arc::clone(&log), commands, interrupt: run.interrupt_handle() });
        tokio::spawn(drive(run, queue, log, Arc::clone(&backends.judge), self.inner.config.max_steps_per_turn));
        runs.insert(id.clone(), slot);
        tracing::info!(run = %id, "run started");
        Ok(id)
    }

    /// Ids of every hosted run, sorted.
    pub fn runs(&self) -> Vec<String> {
        let runs = self.inner.runs.lock().unwrap_or_else(|e| e.into_inner());
        let mut ids: Vec<String> = runs.keys().cloned().collect();
        ids.sort_by_key(|id| (id.len(), id.clone()));
        ids
    }

    pub fn status(&self, run: &str) -> Result<RunStatus, ServiceError> {
        Ok(self.slot(run)?.log.lock().state.status)
    }

    /// The latest published state of a run.
    pub fn snapshot(&self, run: &str) -> Result<Arc<RunState>, ServiceError> {
        Ok(Arc::clone(&self.slot(run)?.log.lock().state))
    }

    /// Copy of the run's published event log and bodies.
    pub fn archive(&self, run: &str) -> Result<RunArchive, ServiceError> {
        Ok(self.slot(run)?.log.lock().archive.clone())
    }

    /// Why the run task stopped, if it stopped on an error.
    pub fn failure(&self, run: &str) -> Result<Option<String>, ServiceError> {
        Ok(self.slot(run)?.log.lock().failure.clone())
    }

    /// Streams the run's messages derived from events numbered `from` and
    /// up. The stream ends once a finished run has delivered everything.
    pub fn subscribe(&self, run: &str, from: u64) -> Result<Subscription, ServiceError> {
        let slot = self.slot(run)?;
        let published = slot.log.lock();
        let live = slot.log.live.subscribe();
        let mut pending = VecDeque::new();
        for event in published.archive.events_from(from) {
            pending.extend(expand_event(run, event, &published.archive.bodies));
        }
        let next_seq = published.archive.next_seq().max(from);
        drop(published);
        Ok(Subscription {
            run: run.to_string(),
            from,
            next_seq,
            pending,
            live,
            log: Arc::clone(&slot.log),
            done: false,
        })
    }

    /// Requests an interrupt. Returns whether the run was running; a run in
    /// any other status is left untouched.
    pub fn send_interrupt(&self, run: &str) -> Result<bool, ServiceError> {
        let slot = self.slot(run)?;
        if slot.log.lock().state.status != RunStatus::Running {
            return Ok(false);
        }
        slot.interrupt.interrupt();
        Ok(true)
    }

    /// Appends a user message and resumes the run. Rejected while the run is
    /// running; interrupt it first.
    pub async fn send_user_message(
        &self,
        run: &str,
        text: &str,
        refs: Vec<QuotedRef>,
    ) -> Result<ActionId, ServiceError> {
        let slot = self.slot(run)?;
        let status = slot.log.lock().state.status;
        if status == RunStatus::Running {
            return Err(ServiceError::NotAccepting(status));
        }
        if text.trim().is_empty() && refs.is_empty() {
            return Err(ServiceError::InvalidRequest("message text is empty".into()));
        }
        let (reply, answer) = oneshot::channel();
        slot.commands
            .send(Command::UserMessage { text: text.to_string(), refs, reply })
            .map_err(|_| ServiceError::RunStopped)?;
        answer.await.map_err(|_| ServiceError::RunStopped)?
    }

    /// Traces the claim at `span` of `unit`. Runs between agent steps.
    pub async fn request_trace(&self, run: &str, unit: UnitId, span: TextSpan) -> Result<TraceResult, ServiceError> {
        let slot = self.slot(run)?;
        {
            let published = slot.log.lock();
            TraceRequest::from_span(&published.state, unit, span)?;
        }
        let (reply, answer) = oneshot::channel();
        slot.commands.send(Command::Trace { unit, span, reply }).map_err(|_| ServiceError::RunStopped)?;
        answer.await.map_err(|_| ServiceError::RunStopped)?
    }

    pub fn query_focus(&self, run: &str, action: ActionId) -> Result<FocusBundle, ServiceError> {
        let state = self.snapshot(run)?;
        FocusBundle::build(&state, action).ok_or(ServiceError::UnknownAction(action))
    }

    pub fn query_info(&self, run: &str, unit: UnitId) -> Result<UnitView, ServiceError> {
        let state = self.snapshot(run)?;
        state.unit(unit).map(UnitView::of).map_err(|_| ServiceError::UnknownUnit(unit))
    }

    /// Markdown report of a finished run.
    pub fn export(&self, run: &str) -> Result<String, ServiceError> {
        let archive = self.archive(run)?;
        export_report(&archive).map_err(|e| match e {
            PersistenceError::NotFinished => ServiceError::NotFinished,
            other => other.into(),
        })
    }
}

/// Live view of one run's messages.
pub struct Subscription {
    run: String,
    from: u64,
    next_seq: u64,
    pending: VecDeque<ServerMessage>,
    live: broadcast::Receiver<RunEvent>,
    log: Arc<PublishedLog>,
    done: bool,
}

impl Subscription {
    fn accept(&mut self, event: RunEvent) {
        // Events already delivered from history are skipped.
        if event.seq < self.next_seq || event.seq < self.from {
            return;
        }
        self.next_seq = event.seq + 1;
        let published = self.log.lock();
        self.pending.extend(expand_event(&self.run, &event, &published.archive.bodies));
    }

    fn lagged(&mut self) {
        self.done = true;
        self.pending.push_back(ServerMessage::error(
            &self.run,
            "subscriber_lagged",
            format!("subscriber fell behind; resubscribe from {}", self.next_seq),
        ));
    }

    pub async fn next(&mut self) -> Option<ServerMessage> {
        loop {
            if let Some(message) = self.pending.pop_front() {
                return Some(message);
            }
            if self.done {
                return None;
            }
            match self.live.try_recv() {
                Ok(event) => {
                    self.accept(event);
                    continue;
                }
                Err(broadcast::error::TryRecvError::Lagged(_)) => {
                    self.lagged();
                    continue;
                }
                Err(broadcast::error::TryRecvError::Closed) => {
                    self.done = true;
                    continue;
                }
                Err(broadcast::error::TryRecvError::Empty) => {
                    let published = self.log.lock();
                    if published.state.status == RunStatus::Finished || published.failure.is_some() {
                        self.done = true;
                        continue;
                    }
                }
            }
            match self.live.recv().await {
                Ok(event) => self.accept(event),
                Err(broadcast::error::RecvError::Lagged(_)) => self.lagged(),
                Err(broadcast::error::RecvError::Closed) => self.done = true,
            }
        }
    }

    pub fn into_stream(self) -> impl Stream<Item = ServerMessage> + Send {
        futures::stream::unfold(self, |mut sub| async move { sub.next().await.map(|m| (m, sub)) })
    }
}

async fn drive(
    mut run: ResearchRun,
    mut queue: mpsc::UnboundedReceiver<Command>,
    log: Arc<PublishedLog>,
    judge: Arc<dyn EvidenceJudge>,
    max_steps: u64,
) {
    let mut budget = max_steps;
    loop {
        let command = if run.status() == RunStatus::Running {
            match queue.try_recv() {
                Ok(command) => Some(command),
                Err(mpsc::error::TryRecvError::Empty) => None,
                Err(mpsc::error::TryRecvError::Disconnected) => break,
            }
        } else {
            match queue.recv().await {
                Some(command) => Some(command),
                None => break,
            }
        };
        let result = match command {
            Some(Command::UserMessage { text, refs, reply }) => {
                let result = run.user_message(&text, refs);
                let failed = matches!(result, Err(RuntimeError::Persistence(_)));
                if result.is_ok() {
                    budget = max_steps;
                }
                let _ = reply.send(result.map_err(ServiceError::from));
                if failed {
                    Err("storage failure while recording a user message".to_string())
                } else {
                    Ok(())
                }
            }
            Some(Command::Trace { unit, span, reply }) => {
                let result = match TraceRequest::from_span(run.state(), unit, span) {
                    Ok(request) => run.trace(&request, judge.as_ref()).await.map_err(ServiceError::from),
                    Err(e) => Err(e.into()),
                };
                let failed = matches!(result, Err(ServiceError::Persistence(_)));
                let _ = reply.send(result);
                if failed {
                    Err("storage failure while recording a trace".to_string())
                } else {
                    Ok(())
                }
            }
            None if budget == 0 => run.pause("step budget for this turn is spent").map_err(|e| e.to_string()),
            None => {
                budget -= 1;
                let outcome = run.run(1).await.map(|_| ()).map_err(|e| e.to_string());
                tokio::task::yield_now().await;
                outcome
            }
        };
        if let Err(message) = result {
            tracing::error!(run = %run.recorder().run_id(), %message, "run task stopped");
            log.fail(message);
            break;
        }
    }
}
