use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BodyStore, ConfigSnapshot, PersistenceError, RunArchive, RunEvent, StateMachine};
use crate::model::{RunState, UnitId};

pub const EVENTS_FORMAT: &str = "research-events";
pub const BODIES_FORMAT: &str = "research-bodies";
pub const FORMAT_VERSION: u32 = 1;
/// A snapshot is written after every this many events.
pub const SNAPSHOT_INTERVAL: u64 = 100;

const EVENTS_FILE: &str = "events.jsonl";
const BODIES_FILE: &str = "bodies.jsonl";
const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    run_id: String,
}

#[derive(Serialize, Deserialize)]
struct BodyRecord {
    unit: UnitId,
    body: Arc<str>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    machine: StateMachine,
}

fn storage(context: &str, e: impl std::fmt::Display) -> PersistenceError {
    PersistenceError::StorageFailure(format!("{context}: {e}"))
}

fn write_line(file: &mut File, value: &impl Serialize) -> Result<(), PersistenceError> {
    let mut line = serde_json::to_vec(value).map_err(|e| storage("serializing record", e))?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()?;
    file.sync_data()?;
    Ok(())
}

/// Parsed records of a line-delimited file plus the byte length of its
/// complete prefix. A final line that is unterminated or does not parse is
/// treated as a torn write and excluded.
fn read_records<T: for<'de> Deserialize<'de>>(
    path: &Path,
    expected_format: &str,
) -> Result<(Header, Vec<T>, u64), PersistenceError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: Header = serde_json::from_str(header_line.trim_end())
        .map_err(|e| storage(&format!("reading header of {}", path.display()), e))?;
    if header.format != expected_format || header.version != FORMAT_VERSION {
        return Err(storage(
            &path.display().to_string(),
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut valid_len = header_line.len() as u64;
    let mut records = Vec::new();
    let mut pending: Option<String> = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(bad) = pending.take() {
            return Err(storage(&path.display().to_string(), format!("unparseable record: {bad}")));
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<T>(line.trim_end()) {
            Ok(record) if complete => {
                valid_len += line.len() as u64;
                records.push(record);
            }
            _ => pending = Some(line),
        }
    }
    Ok((header, records, valid_len))
}

fn load_parts(dir: &Path) -> Result<(RunArchive, u64, u64), PersistenceError> {
    let config_text = std::fs::read_to_string(dir.join(CONFIG_FILE))?;
    let config: ConfigSnapshot = serde_json::from_str(&config_text).map_err(|e| storage("reading config", e))?;
    let (header, events, events_len) = read_records::<RunEvent>(&dir.join(EVENTS_FILE), EVENTS_FORMAT)?;
    let (_, bodies, bodies_len) = read_records::<BodyRecord>(&dir.join(BODIES_FILE), BODIES_FORMAT)?;
    let mut archive = RunArchive::new(header.run_id, config);
    for event in events {
        archive.append_event(event)?;
    }
    archive.bodies = bodies.into_iter().map(|r| (r.unit, r.body)).collect::<BodyStore>();
    Ok((archive, events_len, bodies_len))
}

/// Loads an archived run, discarding a torn trailing record.
pub fn load_dir(dir: &Path) -> Result<RunArchive, PersistenceError> {
    load_parts(dir).map(|(archive, _, _)| archive)
}

/// Replays an archived run, starting from the newest usable snapshot.
pub fn replay_dir(dir: &Path) -> Result<RunState, PersistenceError> {
    let archive = load_dir(dir)?;
    let mut machine = StateMachine::new();
    let mut next = 0u64;
    if let Some(snapshot) = newest_snapshot(dir, archive.next_seq())? {
        next = snapshot.seq + 1;
        machine = snapshot.machine;
    }
    for event in archive.events_from(next) {
        machine.apply(event, &archive.bodies)?;
    }
    Ok(machine.state)
}

fn snapshot_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("snapshot-{seq}.json"))
}

fn newest_snapshot(dir: &Path, log_len: u64) -> Result<Option<Snapshot>, PersistenceError> {
    let mut best: Option<u64> = None;
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(seq) = name
            .to_str()
            .and_then(|n| n.strip_prefix("snapshot-"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if seq < log_len && best.is_none_or(|b| seq > b) {
            best = Some(seq);
        }
    }
    let Some(seq) = best else { return Ok(None) };
    let text = std::fs::read_to_string(snapshot_path(dir, seq))?;
    let snapshot: Snapshot = serde_json::from_str(&text).map_err(|e| storage("reading snapshot", e))?;
    Ok(Some(snapshot))
}

/// Append handles of an on-disk archive.
pub(super) struct DiskWriter {
    dir: PathBuf,
    events: File,
    bodies: File,
}

impl DiskWriter {
    pub(super) fn create(dir: &Path, archive: &RunArchive) -> Result<Self, PersistenceError> {
        std::fs::create_dir_all(dir)?;
        if dir.join(EVENTS_FILE).exists() {
            return Err(storage(&dir.display().to_string(), "directory already holds a run"));
        }
        let config = serde_json::to_string_pretty(&archive.config).map_err(|e| storage("serializing config", e))?;
        std::fs::write(dir.join(CONFIG_FILE), config)?;
        let mut events = OpenOptions::new().create_new(true).append(true).open(dir.join(EVENTS_FILE))?;
        let mut bodies = OpenOptions::new().create_new(true).append(true).open(dir.join(BODIES_FILE))?;
        let header = |format: &str| Header {
            format: format.to_string(),
            version: FORMAT_VERSION,
            run_id: archive.run_id.clone(),
        };
        write_line(&mut events, &header(EVENTS_FORMAT))?;
        write_line(&mut bodies, &header(BODIES_FORMAT))?;
        Ok(Self { dir: dir.to_path_buf(), events, bodies })
    }

    pub(super) fn open(dir: &Path) -> Result<(Self, RunArchive), PersistenceError> {
        let (archive, events_len, bodies_len) = load_parts(dir)?;
        let truncate_and_append = |name: &str, len: u64| -> Result<File, PersistenceError> {
            let mut file = OpenOptions::new().write(true).open(dir.join(name))?;
            file.set_len(len)?;
            file.seek(SeekFrom::End(0))?;
            Ok(file)
        };
        let events = truncate_and_append(EVENTS_FILE, events_len)?;
        let bodies = truncate_and_append(BODIES_FILE, bodies_len)?;
        // snapshots beyond the surviving log describe events that are gone
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let stale = entry
                .file_name()
                .to_str()
                .and_then(|n| n.strip_prefix("snapshot-")?.strip_suffix(".json")?.parse::<u64>().ok())
                .is_some_and(|seq| seq >= archive.next_seq());
            if stale {
                std::fs::remove_file(entry.path())?;
            }
        }
        Ok((Self { dir: dir.to_path_buf(), events, bodies }, archive))
    }

    pub(super) fn append_event(&mut self, event: &RunEvent) -> Result<(), PersistenceError> {
        write_line(&mut self.events, event)
    }

    pub(super) fn append_body(&mut self, unit: UnitId, body: &Arc<str>) -> Result<(), PersistenceError> {
        write_line(&mut self.bodies, &BodyRecord { unit, body: Arc::clone(body) })
    }

    pub(super) fn maybe_snapshot(&mut self, seq: u64, machine: &StateMachine) -> Result<(), PersistenceError> {
        if (seq + 1) % SNAPSHOT_INTERVAL != 0 {
            return Ok(());
        }
        let snapshot = Snapshot { seq, machine: machine.clone() };
        let text = serde_json::to_string(&snapshot).map_err(|e| storage("serializing snapshot", e))?;
        let tmp = self.dir.join(format!("snapshot-{seq}.json.tmp"));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, snapshot_path(&self.dir, seq))?;
        Ok(())
    }
}
