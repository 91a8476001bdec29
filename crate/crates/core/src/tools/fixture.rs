//! Deterministic offline backend.
//!
//! A fixture corpus is a TOML file:
//!
//! ```toml
//! [[search]]
//! query = "yc w26 list"                    # matched case-insensitively
//! retrieved_at = "2026-01-05T00:00:00Z"    # optional, defaults to "fixture"
//! results = [
//!   { title = "YC W26 batch", url = "https://example.org/w26", snippet = "..." },
//! ]
//!
//! [[page]]
//! url = "https://example.org/w26"
//! text = """plain page text"""
//!
//! [[page]]
//! url = "https://example.org/missing"
//! status = 404                             # planted fetch error
//!
//! [[script]]
//! request = "the research question"        # the run's first user message
//! steps = [
//!   { tool = "web_search", narration = "...", query = "yc w26 list" },
//!   { tool = "finish", narration = "done" },
//! ]
//!
//! [[verdict]]                              # model-judge answers, by claim
//! claim = "some claim"
//! quote = "verbatim evidence"              # omit for a no-evidence verdict
//! ```
//!
//! Lookups are total. An unknown query yields an empty result list with a
//! not-found note; an unknown URL yields a 404 page; an unknown request or an
//! exhausted script yields a `finish` call; an unknown claim yields a
//! no-evidence verdict.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{
    validate_query, validate_url, FetchStatus, GatewayError, GatewayRequest, ModelGateway, ResearchTools, ScrapedPage,
    SearchEntry, SearchResultList, ToolCall, ToolError,
};

const DEFAULT_RETRIEVED_AT: &str = "fixture";
pub(crate) const SCRIPT_EXHAUSTED: &str = "fixture script exhausted";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture corpus: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("fixture step {index} of script {request:?} has arguments that are not JSON-representable")]
    Step { request: String, index: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    #[serde(default)]
    search: Vec<RawSearch>,
    #[serde(default)]
    page: Vec<RawPage>,
    #[serde(default)]
    script: Vec<RawScript>,
    #[serde(default)]
    verdict: Vec<RawVerdict>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    query: String,
    retrieved_at: Option<String>,
    #[serde(default)]
    results: Vec<SearchEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPage {
    url: String,
    text: Option<String>,
    status: Option<u16>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    request: String,
    #[serde(default)]
    steps: Vec<RawStep>,
}

#[derive(Deserialize)]
struct RawStep {
    tool: String,
    #[serde(flatten)]
    arguments: BTreeMap<String, toml::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerdict {
    claim: String,
    quote: Option<String>,
}

/// Planted search results, pages, scripted decisions and judge verdicts.
#[derive(Debug, Clone, Default)]
pub struct FixtureCorpus {
    searches: BTreeMap<String, SearchResultList>,
    pages: BTreeMap<String, ScrapedPage>,
    scripts: BTreeMap<String, Vec<ToolCall>>,
    verdicts: BTreeMap<String, Option<String>>,
}

fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl FixtureCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FixtureError> {
        let raw: RawCorpus = toml::from_str(text)?;
        let mut corpus = Self::new();
        for s in raw.search {
            let retrieved_at = s.retrieved_at.unwrap_or_else(|| DEFAULT_RETRIEVED_AT.to_string());
            corpus.searches.insert(
                normalize_query(&s.query),
                SearchResultList { query: s.query, entries: s.results, retrieved_at, note: None },
            );
        }
        for p in raw.page {
            let page = match (p.status, p.text) {
                (Some(code), _) if code != 200 => ScrapedPage::failed(p.url.clone(), FetchStatus::Http { code }),
                (_, text) => ScrapedPage::ok(p.url.clone(), text.unwrap_or_default()),
            };
            corpus.pages.insert(p.url, page);
        }
        for script in raw.script {
            let mut calls = Vec::with_capacity(script.steps.len());
            for (index, step) in script.steps.into_iter().enumerate() {
                let arguments = serde_json::to_value(&step.arguments)
                    .map_err(|_| FixtureError::Step { request: script.request.clone(), index })?;
                calls.push(ToolCall { name: step.tool, arguments });
            }
            corpus.scripts.insert(script.request.trim().to_string(), calls);
        }
        for v in raw.verdict {
            corpus.verdicts.insert(v.claim, v.quote);
        }
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn with_search(mut self, query: &str, entries: Vec<SearchEntry>) -> Self {
        self.searches.insert(
            normalize_query(query),
            SearchResultList {
                query: query.to_string(),
                entries,
                retrieved_at: DEFAULT_RETRIEVED_AT.to_string(),
                note: None,
            },
        );
        self
    }

    pub fn with_page(mut self, url: &str, text: &str) -> Self {
        self.pages.insert(url.to_string(), ScrapedPage::ok(url, text));
        self
    }

    pub fn with_page_error(mut self, url: &str, code: u16) -> Self {
        self.pages.insert(url.to_string(), ScrapedPage::failed(url, FetchStatus::Http { code }));
        self
    }

    pub fn with_script(mut self, request: &str, steps: Vec<ToolCall>) -> Self {
        self.scripts.insert(request.trim().to_string(), steps);
        self
    }

    pub fn with_verdict(mut self, claim: &str, quote: Option<&str>) -> Self {
        self.verdicts.insert(claim.to_string(), quote.map(str::to_string));
        self
    }

    pub fn search(&self, query: &str) -> SearchResultList {
        self.searches.get(&normalize_query(query)).cloned().unwrap_or_else(|| SearchResultList {
            query: query.to_string(),
            entries: Vec::new(),
            retrieved_at: DEFAULT_RETRIEVED_AT.to_string(),
            note: Some("no results found for this query".to_string()),
        })
    }

    pub fn page(&self, url: &str) -> ScrapedPage {
        self.pages.get(url).cloned().unwrap_or_else(|| ScrapedPage::failed(url, FetchStatus::Http { code: 404 }))
    }

    /// Scripted decision for `request` at agent step `step`.
    pub fn scripted_step(&self, request: &str, step: usize) -> ToolCall {
        self.scripts
            .get(request.trim())
            .and_then(|steps| steps.get(step))
            .cloned()
            .unwrap_or_else(|| ToolCall::new("finish", json!({ "narration": SCRIPT_EXHAUSTED })))
    }

    pub fn verdict(&self, claim: &str) -> Option<&str> {
        self.verdicts.get(claim).and_then(|q| q.as_deref())
    }
}

/// Search and scrape served from a [`FixtureCorpus`].
#[derive(Debug, Clone)]
pub struct FixtureTools {
    corpus: Arc<FixtureCorpus>,
}

impl FixtureTools {
    pub fn new(corpus: Arc<FixtureCorpus>) -> Self {
        Self { corpus }
    }
}

#[async_trait]
impl ResearchTools for FixtureTools {
    async fn web_search(&self, query: &str) -> Result<SearchResultList, ToolError> {
        let q = validate_query(query)?;
        Ok(self.corpus.search(q))
    }

    async fn scrape(&self, url: &str) -> Result<ScrapedPage, ToolError> {
        validate_url(url)?;
        Ok(self.corpus.page(url.trim()))
    }
}

/// Decision function driven by scripts keyed on the run's initial request.
///
/// The step index is the number of agent actions visible in the rendered
/// context, so the scripted answer is a pure function of the request.
#[derive(Debug, Clone)]
pub struct ScriptedGateway {
    corpus: Arc<FixtureCorpus>,
}

impl ScriptedGateway {
    pub fn new(corpus: Arc<FixtureCorpus>) -> Self {
        Self { corpus }
    }
}

#[async_trait]
impl ModelGateway for ScriptedGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        match request {
            GatewayRequest::Decide { context, .. } => {
                let fingerprint = context.initial_request().unwrap_or_default();
                Ok(self.corpus.scripted_step(fingerprint, context.agent_actions().len()))
            }
            GatewayRequest::Judge { claim, .. } => {
                Ok(ToolCall::new("report_evidence", json!({ "quote": self.corpus.verdict(claim) })))
            }
        }
    }
}
