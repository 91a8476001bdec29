//! External-service clients: web search, page scraping and the model
//! gateway, each with a live backend and a deterministic fixture backend
//! sharing the same contracts and error shapes.

mod extract;
mod fixture;
mod gateway;
mod live;
mod rate;

use std::fmt::Write as _;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::html_to_text;
pub use fixture::{FixtureCorpus, FixtureError, FixtureTools, ScriptedGateway};
pub use gateway::{
    CaptureLog, CaptureRecord, CapturedResponse, CapturingGateway, GatewayError, GatewayRequest, ModelGateway,
    ReplayGateway, ToolCall, JUDGE_PROMPT, JUDGE_PROMPT_VERSION, SYSTEM_PROMPT, SYSTEM_PROMPT_VERSION, TOOL_SCHEMA,
    TOOL_SCHEMA_VERSION,
};
pub use live::{HttpScraper, LiveConfig, LiveTools, OpenAiGateway, SearchApiClient};
pub use rate::TokenBucket;

/// Default number of results requested per search.
pub const DEFAULT_RESULT_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("search query is empty")]
    EmptyQuery,
    #[error("invalid URL {0:?}")]
    InvalidUrl(String),
    #[error("network failure: {0}")]
    Network(String),
    #[error("rate limited by backend")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub title: String,
    pub url: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResultList {
    pub query: String,
    pub entries: Vec<SearchEntry>,
    pub retrieved_at: String,
    /// Set when the backend had nothing for the query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SearchResultList {
    /// Canonical text form stored as the Search unit body.
    ///
    /// ```text
    /// query: <query>
    /// retrieved_at: <timestamp>
    /// results: <n>
    ///
    /// [1] <title>
    /// <url>
    /// <snippet>
    /// ```
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "query: {}", self.query);
        let _ = writeln!(out, "retrieved_at: {}", self.retrieved_at);
        let _ = write!(out, "results: {}", self.entries.len());
        if let Some(note) = &self.note {
            let _ = write!(out, "\nnote: {note}");
        }
        for (i, entry) in self.entries.iter().enumerate() {
            let _ = write!(out, "\n\n[{}] {}\n{}", i + 1, entry.title, entry.url);
            if !entry.snippet.is_empty() {
                let _ = write!(out, "\n{}", entry.snippet);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    Http { code: u16 },
    Timeout,
    Network { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapedPage {
    pub url: String,
    /// Plain text for successful fetches, an error description otherwise.
    pub extracted_text: String,
    #[serde(flatten)]
    pub fetch_status: FetchStatus,
}

impl ScrapedPage {
    pub fn ok(url: impl Into<String>, text: impl Into<String>) -> Self {
        Self { url: url.into(), extracted_text: text.into(), fetch_status: FetchStatus::Ok }
    }

    /// A failed fetch whose body describes the failure.
    pub fn failed(url: impl Into<String>, status: FetchStatus) -> Self {
        let url = url.into();
        let extracted_text = match &status {
            FetchStatus::Ok => String::new(),
            FetchStatus::Http { code } => format!("{code} {}: {url}", http_reason(*code)),
            FetchStatus::Timeout => format!("timeout: no response from {url}"),
            FetchStatus::Network { message } => format!("network error fetching {url}: {message}"),
        };
        Self { url, extracted_text, fetch_status: status }
    }

    pub fn is_ok(&self) -> bool {
        self.fetch_status == FetchStatus::Ok
    }
}

fn http_reason(code: u16) -> &'static str {
    match code {
        400 => "bad request",
        401 => "unauthorized",
        403 => "forbidden",
        404 => "file not found",
        410 => "gone",
        429 => "too many requests",
        500 => "internal server error",
        502 => "bad gateway",
        503 => "service unavailable",
        504 => "gateway timeout",
        400..=499 => "client error",
        _ => "server error",
    }
}

/// Accepts absolute `http`/`https` URLs only.
pub fn validate_url(raw: &str) -> Result<url::Url, ToolError> {
    let parsed = url::Url::parse(raw.trim()).map_err(|_| ToolError::InvalidUrl(raw.to_string()))?;
    match parsed.scheme() {
        "http" | "https" if parsed.host().is_some() => Ok(parsed),
        _ => Err(ToolError::InvalidUrl(raw.to_string())),
    }
}

pub fn validate_query(query: &str) -> Result<&str, ToolError> {
    let q = query.trim();
    if q.is_empty() {
        Err(ToolError::EmptyQuery)
    } else {
        Ok(q)
    }
}

/// Search and scrape backends used by the agent loop.
#[async_trait]
pub trait ResearchTools: Send + Sync {
    async fn web_search(&self, query: &str) -> Result<SearchResultList, ToolError>;

    /// Fetch failures are reported in the returned page, not as errors;
    /// only precondition violations are `Err`.
    async fn scrape(&self, url: &str) -> Result<ScrapedPage, ToolError>;
}

#[async_trait]
impl<T: ResearchTools + ?Sized> ResearchTools for std::sync::Arc<T> {
    async fn web_search(&self, query: &str) -> Result<SearchResultList, ToolError> {
        (**self).web_search(query).await
    }

    async fn scrape(&self, url: &str) -> Result<ScrapedPage, ToolError> {
        (**self).scrape(url).await
    }
}
