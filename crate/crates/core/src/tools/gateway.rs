//! Model gateway: the provider-agnostic decision/verdict interface, plus the
//! capture log and record/replay wrappers used for determinism checks.
//!
//! Capture log format: one JSON object per line,
//! `{"seq": n, "request": {...}, "response": {"ok": {...}} | {"err": "..."}}`.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduction::RenderedContext;

pub const SYSTEM_PROMPT_VERSION: &str = "system_prompt.v1";
pub const TOOL_SCHEMA_VERSION: &str = "tool_schema.v1";
pub const JUDGE_PROMPT_VERSION: &str = "judge_prompt.v1";

/// System prompt given to the research agent.
pub const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.v1.md");
/// Tool definitions (OpenAI function-calling format) offered to the agent.
pub const TOOL_SCHEMA: &str = include_str!("../../assets/tool_schema.v1.json");
/// Instructions for the evidence judge.
pub const JUDGE_PROMPT: &str = include_str!("../../assets/judge_prompt.v1.md");

/// A structured tool call returned by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Self { name: name.into(), arguments }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "purpose", rename_all = "snake_case")]
pub enum GatewayRequest {
    /// Choose the next research action from the rendered context.
    Decide {
        prompt_version: String,
        tool_schema_version: String,
        context: RenderedContext,
        /// Tool the model is required to call, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forced_tool: Option<String>,
    },
    /// Quote evidence for `claim` from `body`, or report none.
    Judge { prompt_version: String, claim: String, body: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("gateway unavailable: {0}")]
    Unavailable(String),
    #[error("malformed gateway response: {0}")]
    Malformed(String),
    #[error("gateway request timed out")]
    Timeout,
    #[error("replay diverged at call {0}")]
    ReplayDiverged(usize),
}

/// Provider-agnostic model interface. It is the decision function of the
/// agent loop and the backend of the model judge.
#[async_trait]
pub trait ModelGateway: Send + Sync {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError>;
}

#[async_trait]
impl<F> ModelGateway for F
where
    F: Fn(&GatewayRequest) -> Result<ToolCall, GatewayError> + Send + Sync,
{
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        self(request)
    }
}

#[async_trait]
impl<G: ModelGateway + ?Sized> ModelGateway for Arc<G> {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        (**self).complete(request).await
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturedResponse {
    Ok(ToolCall),
    Err(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub seq: usize,
    pub request: GatewayRequest,
    pub response: CapturedResponse,
}

/// Shared append-only capture log.
#[derive(Debug, Clone, Default)]
pub struct CaptureLog {
    records: Arc<Mutex<Vec<CaptureRecord>>>,
}

impl CaptureLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<CaptureRecord> {
        self.records.lock().expect("capture log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("capture log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, request: GatewayRequest, response: CapturedResponse) {
        let mut records = self.records.lock().expect("capture log poisoned");
        let seq = records.len();
        records.push(CaptureRecord { seq, request, response });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&serde_json::to_string(&record).expect("capture record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read_from(path: &Path) -> std::io::Result<Vec<CaptureRecord>> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        file.lines()
            .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
            .map(|line| {
                let line = line?;
                serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
            .collect()
    }
}

/// Records every request/response pair of the wrapped gateway.
pub struct CapturingGateway<G> {
    inner: G,
    log: CaptureLog,
}

impl<G: ModelGateway> CapturingGateway<G> {
    pub fn new(inner: G, log: CaptureLog) -> Self {
        Self { inner, log }
    }
}

#[async_trait]
impl<G: ModelGateway> ModelGateway for CapturingGateway<G> {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        let result = self.inner.complete(request).await;
        let captured = match &result {
            Ok(call) => CapturedResponse::Ok(call.clone()),
            Err(e) => CapturedResponse::Err(e.to_string()),
        };
        self.log.push(request.clone(), captured);
        result
    }
}

/// Serves recorded responses in order, refusing requests that differ from
/// the recording.
pub struct ReplayGateway {
    records: Vec<CaptureRecord>,
    cursor: Mutex<usize>,
}

impl ReplayGateway {
    pub fn new(records: Vec<CaptureRecord>) -> Self {
        Self { records, cursor: Mutex::new(0) }
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - *self.cursor.lock().expect("cursor poisoned")
    }
}

#[async_trait]
impl ModelGateway for ReplayGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        let mut cursor = self.cursor.lock().expect("cursor poisoned");
        let index = *cursor;
        let record = self.records.get(index).ok_or(GatewayError::ReplayDiverged(index))?;
        if &record.request != request {
            return Err(GatewayError::ReplayDiverged(index));
        }
        *cursor += 1;
        match &record.response {
            CapturedResponse::Ok(call) => Ok(call.clone()),
            CapturedResponse::Err(message) => Err(GatewayError::Unavailable(message.clone())),
        }
    }
}
