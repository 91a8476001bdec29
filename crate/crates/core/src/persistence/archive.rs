use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::disk::DiskWriter;
use super::{Applied, BodyStore, EventKind, PersistenceError, RunEvent, StateMachine};
use crate::model::{RunState, UnitId};
use crate::runtime::RunConfig;
use crate::tools::{JUDGE_PROMPT_VERSION, SYSTEM_PROMPT_VERSION, TOOL_SCHEMA_VERSION};

/// Configuration a run was recorded under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub run: RunConfig,
    pub system_prompt_version: String,
    pub tool_schema_version: String,
    pub judge_prompt_version: String,
}

impl ConfigSnapshot {
    pub fn new(run: RunConfig) -> Self {
        Self {
            run,
            system_prompt_version: SYSTEM_PROMPT_VERSION.to_string(),
            tool_schema_version: TOOL_SCHEMA_VERSION.to_string(),
            judge_prompt_version: JUDGE_PROMPT_VERSION.to_string(),
        }
    }
}

/// Event log, body store and config of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunArchive {
    pub run_id: String,
    pub config: ConfigSnapshot,
    pub events: Vec<RunEvent>,
    pub bodies: BodyStore,
}

impl RunArchive {
    pub fn new(run_id: impl Into<String>, config: ConfigSnapshot) -> Self {
        Self { run_id: run_id.into(), config, events: Vec::new(), bodies: BodyStore::new() }
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn append_event(&mut self, event: RunEvent) -> Result<(), PersistenceError> {
        let expected = self.next_seq();
        if event.seq != expected {
            return Err(PersistenceError::SequenceGap { expected, got: event.seq });
        }
        self.events.push(event);
        Ok(())
    }

    /// Stores a body once; storing identical content again is a no-op.
    pub fn put_body(&mut self, unit: UnitId, body: Arc<str>) -> Result<bool, PersistenceError> {
        match self.bodies.get(&unit) {
            Some(existing) if **existing == *body => Ok(false),
            Some(_) => Err(PersistenceError::BodyConflict(unit)),
            None => {
                self.bodies.insert(unit, body);
                Ok(true)
            }
        }
    }

    /// The event log as line-delimited JSON, without the file header.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn events_from(&self, seq: u64) -> &[RunEvent] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }
}

type Listener = Box<dyn FnMut(&RunEvent, &RunState) + Send>;

/// Write-ahead recorder: the single writer of a run's archive and state.
pub struct Recorder {
    archive: RunArchive,
    machine: StateMachine,
    disk: Option<DiskWriter>,
    listeners: Vec<Listener>,
    poisoned: bool,
}

impl Recorder {
    pub fn in_memory(run_id: impl Into<String>, config: ConfigSnapshot) -> Self {
        Self {
            archive: RunArchive::new(run_id, config),
            machine: StateMachine::new(),
            disk: None,
            listeners: Vec::new(),
            poisoned: false,
        }
    }

    /// Starts a new run archived under `dir`, which must not hold a run yet.
    pub fn create_dir(dir: &Path, run_id: impl Into<String>, config: ConfigSnapshot) -> Result<Self, PersistenceError> {
        let archive = RunArchive::new(run_id, config);
        let disk = DiskWriter::create(dir, &archive)?;
        Ok(Self { archive, machine: StateMachine::new(), disk: Some(disk), listeners: Vec::new(), poisoned: false })
    }

    /// Reopens an archived run for continuation. A torn trailing record is
    /// discarded; sequence numbers resume after the last complete event.
    pub fn open_dir(dir: &Path) -> Result<Self, PersistenceError> {
        let (disk, archive) = DiskWriter::open(dir)?;
        let mut machine = StateMachine::new();
        for event in &archive.events {
            machine.apply(event, &archive.bodies)?;
        }
        Ok(Self { archive, machine, disk: Some(disk), listeners: Vec::new(), poisoned: false })
    }

    pub fn state(&self) -> &RunState {
        &self.machine.state
    }

    pub fn archive(&self) -> &RunArchive {
        &self.archive
    }

    pub fn run_id(&self) -> &str {
        &self.archive.run_id
    }

    pub fn config(&self) -> &ConfigSnapshot {
        &self.archive.config
    }

    /// Called after every committed event with the updated state.
    pub fn add_listener(&mut self, listener: impl FnMut(&RunEvent, &RunState) + Send + 'static) {
        self.listeners.push(Box::new(listener));
    }

    /// Durably stores a unit body. Must precede the `UnitRecorded` event.
    pub fn put_body(&mut self, unit: UnitId, body: Arc<str>) -> Result<(), PersistenceError> {
        if self.archive.put_body(unit, Arc::clone(&body))? {
            if let Some(disk) = &mut self.disk {
                if let Err(e) = disk.append_body(unit, &body) {
                    self.archive.bodies.remove(&unit);
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    /// Validates and applies `kind`, then appends it durably before any
    /// listener observes the new state. A storage failure after validation
    /// poisons the recorder: the in-memory state is ahead of the log, so no
    /// further events are accepted.
    pub fn commit(&mut self, kind: EventKind) -> Result<Applied, PersistenceError> {
        if self.poisoned {
            return Err(PersistenceError::StorageFailure("recorder poisoned by an earlier storage failure".into()));
        }
        let event = RunEvent { seq: self.archive.next_seq(), kind };
        let applied = self.machine.apply(&event, &self.archive.bodies)?;
        if let Some(disk) = &mut self.disk {
            if let Err(e) = disk.append_event(&event).and_then(|_| disk.maybe_snapshot(event.seq, &self.machine)) {
                self.poisoned = true;
                return Err(e);
            }
        }
        self.archive.append_event(event)?;
        let event = self.archive.events.last().expect("just appended");
        for listener in &mut self.listeners {
            listener(event, &self.machine.state);
        }
        Ok(applied)
    }

    pub fn into_archive(self) -> RunArchive {
        self.archive
    }
}
