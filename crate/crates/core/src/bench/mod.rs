//! Benchmark harness.
//!
//! Tasks are JSON lines:
//!
//! ```json
//! {"id": "w26-rockets", "question": "...", "answer": "Acme", "grader": "exact_match"}
//! ```
//!
//! Each task becomes one run. The answer is read from the final note: the
//! text after its first `Answer:` line if there is one, otherwise the whole
//! body, with citation markers removed either way. `exact_match` compares
//! normalized strings; `contains_all` splits the expected answer on `;` or
//! `|` and requires every part, normalized, inside the normalized answer.
//! Tasks without an expected answer are run and reported as ungraded.
//!
//! `report.json` and `summary.txt` depend only on the tasks and the backends,
//! so fixture runs reproduce them byte for byte. Wall-clock timings go to
//! `timings.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtrace::strip_citation_markers;
use crate::persistence::{ConfigSnapshot, PersistenceError, Recorder};
use crate::runtime::{ResearchRun, RunConfig, RunOutcome};
use crate::tools::{ModelGateway, ResearchTools};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {message}")]
    InvalidTask { line: usize, message: String },
    #[error("duplicate task id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grader {
    ExactMatch,
    ContainsAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchTask {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default = "default_grader")]
    pub grader: Grader,
}

fn default_grader() -> Grader {
    Grader::ExactMatch
}

pub fn parse_tasks(text: &str) -> Result<Vec<BenchTask>, BenchError> {
    let mut tasks: Vec<BenchTask> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: BenchTask =
            serde_json::from_str(line).map_err(|e| BenchError::InvalidTask { line: i + 1, message: e.to_string() })?;
        if task.id.trim().is_empty() || task.question.trim().is_empty() {
            return Err(BenchError::InvalidTask { line: i + 1, message: "id and question must be non-empty".into() });
        }
        if tasks.iter().any(|t| t.id == task.id) {
            return Err(BenchError::DuplicateId(task.id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_tasks(path: &Path) -> Result<Vec<BenchTask>, BenchError> {
    parse_tasks(&std::fs::read_to_string(path)?)
}

/// Lowercases, turns everything but letters and digits into spaces and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let mapped: String = text.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' }).collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn extract_answer(note_body: &str) -> String {
    let answer_line = note_body.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let head = line.get(..7)?;
        head.eq_ignore_ascii_case("answer:").then(|| line[7..].trim_start_matches('*'))
    });
    strip_citation_markers(answer_line.unwrap_or(note_body)).trim().to_string()
}

pub fn grade(grader: Grader, expected: &str, answer: &str) -> bool {
    let answer = normalize_answer(answer);
    match grader {
        Grader::ExactMatch => answer == normalize_answer(expected),
        Grader::ContainsAll => {
            let padded = format!(" {answer} ");
            let parts: Vec<String> =
                expected.split([';', '|']).map(normalize_answer).filter(|p| !p.is_empty()).collect();
            !parts.is_empty() && parts.iter().all(|p| padded.contains(&format!(" {p} ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Correct,
    Incorrect,
    Ungraded,
    /// The run failed or needed a human before finishing.
    Errored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    pub id: String,
    pub status: TaskStatus,
    pub expected: Option<String>,
    pub answer: Option<String>,
    pub detail: Option<String>,
    pub actions: usize,
    pub units: usize,
    pub sessions: usize,
    pub coerced_summaries: u64,
    pub invalid_decisions: u64,
    pub peak_context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tasks: Vec<TaskReport>,
    pub graded: usize,
    pub correct: usize,
    pub errored: usize,
}

impl BenchReport {
    fn from_tasks(tasks: Vec<TaskReport>) -> Self {
        let count = |s: TaskStatus| tasks.iter().filter(|t| t.status == s).count();
        let correct = count(TaskStatus::Correct);
        let errored = count(TaskStatus::Errored);
        let graded = correct + count(TaskStatus::Incorrect);
        Self { tasks, graded, correct, errored }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports serialize");
        text.push('\n');
        text
    }

    pub fn summary(&self) -> String {
        let width = self.tasks.iter().map(|t| t.id.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:<9}  answer\n", "task", "status");
        for t in &self.tasks {
            let status = serde_json::to_value(t.status).expect("status serializes");
            let answer = t.answer.as_deref().or(t.detail.as_deref()).unwrap_or("");
            let answer: String = answer.replace('\n', " ").chars().take(80).collect();
            let _ = writeln!(out, "{:<width$}  {:<9}  {answer}", t.id, status.as_str().unwrap_or(""));
        }
        let _ = writeln!(out, "\ncorrect: {}/{} graded", self.correct, self.graded);
        let _ = writeln!(out, "errored: {}", self.errored);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub id: String,
    pub millis: u128,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub run: RunConfig,
    pub max_steps: u64,
    pub concurrency: usize,
    /// Archive each run under `<dir>/runs/<task id>/` when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { run: RunConfig::default(), max_steps: 200, concurrency: 4, out_dir: None }
    }
}

async fn run_task(
    task: &BenchTask,
    config: &BenchConfig,
    gateway: Arc<dyn ModelGateway>,
    tools: Arc<dyn ResearchTools>,
) -> TaskReport {
    let snapshot = ConfigSnapshot::new(config.run.clone());
    let recorder = match &config.out_dir {
        Some(dir) => Recorder::create_dir(&dir.join("runs").join(&task.id), task.id.clone(), snapshot),
        None => Ok(Recorder::in_memory(task.id.clone(), snapshot)),
    };
    let mut report = TaskReport {
        id: task.id.clone(),
        status: TaskStatus::Errored,
        expected: task.answer.clone(),
        answer: None,
        detail: None,
        actions: 0,
        units: 0,
        sessions: 0,
        coerced_summaries: 0,
        invalid_decisions: 0,
        peak_context_tokens: 0,
    };
    let mut run = match recorder {
        Ok(recorder) => ResearchRun::new(recorder, gateway, tools),
        Err(e) => {
            report.detail = Some(e.to_string());
            return report;
        }
    };
    let outcome = match run.user_message(&task.question, Vec::new()) {
        Ok(_) => run.run(config.max_steps).await,
        Err(e) => Err(e),
    };
    let state = run.state();
    report.actions = state.actions.len();
    report.units = state.units.len();
    report.sessions = state.sessions.len();
    report.coerced_summaries = run.stats().coerced_summaries;
    report.invalid_decisions = run.stats().invalid_decisions;
    report.peak_context_tokens = run.stats().peak_context_tokens;
    report.answer = state.final_note().map(|note| extract_answer(&note.body));
    match outcome {
        Ok(RunOutcome::Finished) => {
            report.status = match (&task.answer, &report.answer) {
                (None, _) => TaskStatus::Ungraded,
                (Some(expected), Some(answer)) if grade(task.grader, expected, answer) => TaskStatus::Correct,
                _ => TaskStatus::Incorrect,
            };
            if report.answer.is_none() {
                report.detail = Some("finished without a note".into());
            }
        }
        Ok(RunOutcome::MaxSteps) => {
            report.status = if task.answer.is_some() { TaskStatus::Incorrect } else { TaskStatus::Ungraded };
            report.detail = Some(format!("step limit of {} reached", config.max_steps));
        }
        Ok(RunOutcome::AwaitingUser { reason }) => {
            report.detail = Some(reason.unwrap_or_else(|| "run stopped for user input".into()));
        }
        Ok(RunOutcome::Interrupted) => report.detail = Some("interrupted".into()),
        Err(e) => report.detail = Some(e.to_string()),
    }
    report
}

/// Runs every task, at most `concurrency` at a time. Reports keep task order.
pub async fn run_bench(
    tasks: &[BenchTask],
    config: &BenchConfig,
    gateway: Arc<dyn ModelGateway>,
    tools: Arc<dyn ResearchTools>,
) -> (BenchReport, Vec<TaskTiming>) {
    let results: Vec<(TaskReport, TaskTiming)> = futures::stream::iter(tasks)
        .map(|task| {
            let (gateway, tools) = (Arc::clone(&gateway), Arc::clone(&tools));
            async move {
                let started = Instant::now();
                let report = run_task(task, config, gateway, tools).await;
                tracing::info!(task = %task.id, status = ?report.status, "task done");
                (report, TaskTiming { id: task.id.clone(), millis: started.elapsed().as_millis() })
            }
        })
        .buffered(config.concurrency.max(1))
        .collect()
        .await;
    let (reports, timings) = results.into_iter().unzip();
    (BenchReport::from_tasks(reports), timings)
}

/// Writes `report.json`, `summary.txt` and `timings.json` into `dir`.
pub fn write_outputs(dir: &Path, report: &BenchReport, timings: &[TaskTiming]) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(dir.join("summary.txt"), report.summary())?;
    let timings = serde_json::to_string_pretty(timings).expect("timings serialize");
    std::fs::write(dir.join("timings.json"), timings + "\n")?;
    Ok(())
}
