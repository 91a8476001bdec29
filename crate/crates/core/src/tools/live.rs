//! Live backends: a Serper-compatible search API, an HTTP scraper and an
//! OpenAI-compatible chat-completions gateway.
//!
//! Configuration comes from the environment:
//!
//! | variable                   | default                                       |
//! |----------------------------|-----------------------------------------------|
//! | `RESEARCH_SEARCH_URL`      | `https://google.serper.dev/search`            |
//! | `RESEARCH_SEARCH_API_KEY`  | required for search                           |
//! | `RESEARCH_GATEWAY_URL`     | `https://api.openai.com/v1/chat/completions`  |
//! | `RESEARCH_GATEWAY_API_KEY` | required for the gateway                      |
//! | `RESEARCH_MODEL`           | `gpt-4.1`                                     |

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    extract::html_to_text, validate_query, validate_url, FetchStatus, GatewayError, GatewayRequest, ModelGateway,
    ResearchTools, ScrapedPage, SearchEntry, SearchResultList, TokenBucket, ToolCall, ToolError, DEFAULT_RESULT_COUNT,
    JUDGE_PROMPT, SYSTEM_PROMPT, TOOL_SCHEMA,
};

const USER_AGENT: &str = concat!("research-engine/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub search_url: String,
    pub search_api_key: Option<String>,
    pub search_timeout: Duration,
    pub scrape_timeout: Duration,
    pub gateway_url: String,
    pub gateway_api_key: Option<String>,
    pub model: String,
    pub gateway_timeout: Duration,
    /// Requests per second allowed against each backend.
    pub requests_per_second: f64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            search_url: "https://google.serper.dev/search".into(),
            search_api_key: None,
            search_timeout: Duration::from_secs(15),
            scrape_timeout: Duration::from_secs(30),
            gateway_url: "https://api.openai.com/v1/chat/completions".into(),
            gateway_api_key: None,
            model: "gpt-4.1".into(),
            gateway_timeout: Duration::from_secs(120),
            requests_per_second: 5.0,
        }
    }
}

impl LiveConfig {
    pub fn from_env() -> Self {
        let mut config = Self::default();
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        if let Some(v) = var("RESEARCH_SEARCH_URL") {
            config.search_url = v;
        }
        config.search_api_key = var("RESEARCH_SEARCH_API_KEY");
        if let Some(v) = var("RESEARCH_GATEWAY_URL") {
            config.gateway_url = v;
        }
        config.gateway_api_key = var("RESEARCH_GATEWAY_API_KEY");
        if let Some(v) = var("RESEARCH_MODEL") {
            config.model = v;
        }
        config
    }
}

fn client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .user_agent(USER_AGENT)
        .build()
        .expect("HTTP client configuration is static")
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Deserialize)]
struct SerperResponse {
    #[serde(default)]
    organic: Vec<SerperEntry>,
}

#[derive(Deserialize)]
struct SerperEntry {
    #[serde(default)]
    title: String,
    link: String,
    #[serde(default)]
    snippet: String,
}

pub struct SearchApiClient {
    http: reqwest::Client,
    url: String,
    api_key: Option<String>,
    bucket: TokenBucket,
}

impl SearchApiClient {
    pub fn new(config: &LiveConfig) -> Self {
        Self {
            http: client(config.search_timeout),
            url: config.search_url.clone(),
            api_key: config.search_api_key.clone(),
            bucket: TokenBucket::new(1, config.requests_per_second),
        }
    }

    pub async fn search(&self, query: &str) -> Result<SearchResultList, ToolError> {
        let query = validate_query(query)?;
        self.bucket.acquire().await;
        let mut request = self.http.post(&self.url).json(&json!({ "q": query, "num": DEFAULT_RESULT_COUNT }));
        if let Some(key) = &self.api_key {
            request = request.header("X-API-KEY", key);
        }
        let response = request.send().await.map_err(network_error)?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(ToolError::RateLimited);
        }
        if !status.is_success() {
            return Err(ToolError::Network(format!("search backend returned HTTP {}", status.as_u16())));
        }
        let parsed: SerperResponse = response.json().await.map_err(network_error)?;
        let entries: Vec<SearchEntry> = parsed
            .organic
            .into_iter()
            .take(DEFAULT_RESULT_COUNT)
            .map(|e| SearchEntry { title: e.title, url: e.link, snippet: e.snippet })
            .collect();
        let note = entries.is_empty().then(|| "no results found for this query".to_string());
        Ok(SearchResultList { query: query.to_string(), entries, retrieved_at: now_rfc3339(), note })
    }
}

fn network_error(e: reqwest::Error) -> ToolError {
    if e.is_timeout() {
        ToolError::Timeout
    } else {
        ToolError::Network(e.to_string())
    }
}

pub struct HttpScraper {
    http: reqwest::Client,
    bucket: TokenBucket,
}

impl HttpScraper {
    pub fn new(config: &LiveConfig) -> Self {
        Self { http: client(config.scrape_timeout), bucket: TokenBucket::new(4, config.requests_per_second) }
    }

    pub async fn scrape(&self, url: &str) -> Result<ScrapedPage, ToolError> {
        let parsed = validate_url(url)?;
        let url = url.trim();
        self.bucket.acquire().await;
        let response = match self.http.get(parsed).send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Ok(ScrapedPage::failed(url, FetchStatus::Timeout)),
            Err(e) => return Ok(ScrapedPage::failed(url, FetchStatus::Network { message: e.to_string() })),
        };
        let status = response.status();
        if !status.is_success() {
            return Ok(ScrapedPage::failed(url, FetchStatus::Http { code: status.as_u16() }));
        }
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("text/html")
            .to_ascii_lowercase();
        let body = match response.text().await {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Ok(ScrapedPage::failed(url, FetchStatus::Timeout)),
            Err(e) => return Ok(ScrapedPage::failed(url, FetchStatus::Network { message: e.to_string() })),
        };
        let text = if content_type.contains("html") {
            html_to_text(&body)
        } else if content_type.starts_with("text/") || content_type.contains("json") {
            body
        } else {
            let message = format!("unsupported content type {content_type}");
            return Ok(ScrapedPage::failed(url, FetchStatus::Network { message }));
        };
        Ok(ScrapedPage::ok(url, text))
    }
}

/// Live search plus scraping.
pub struct LiveTools {
    search: SearchApiClient,
    scraper: HttpScraper,
}

impl LiveTools {
    pub fn new(config: &LiveConfig) -> Self {
        Self { search: SearchApiClient::new(config), scraper: HttpScraper::new(config) }
    }
}

#[async_trait]
impl ResearchTools for LiveTools {
    async fn web_search(&self, query: &str) -> Result<SearchResultList, ToolError> {
        self.search.search(query).await
    }

    async fn scrape(&self, url: &str) -> Result<ScrapedPage, ToolError> {
        self.scraper.scrape(url).await
    }
}

/// Chat-completions gateway using function calling.
pub struct OpenAiGateway {
    http: reqwest::Client,
    url: String,
    api_key: Option<String>,
    model: String,
    tools: Arc<Value>,
    bucket: TokenBucket,
}

impl OpenAiGateway {
    pub fn new(config: &LiveConfig) -> Self {
        Self {
            http: client(config.gateway_timeout),
            url: config.gateway_url.clone(),
            api_key: config.gateway_api_key.clone(),
            model: config.model.clone(),
            tools: Arc::new(serde_json::from_str(TOOL_SCHEMA).expect("tool schema asset is valid JSON")),
            bucket: TokenBucket::new(2, config.requests_per_second),
        }
    }

    fn judge_tool() -> Value {
        json!([{
            "type": "function",
            "function": {
                "name": "report_evidence",
                "description": "Report a verbatim quote from the candidate text that supports the claim, or null.",
                "parameters": {
                    "type": "object",
                    "properties": { "quote": { "type": ["string", "null"] } },
                    "required": ["quote"]
                }
            }
        }])
    }

    fn payload(&self, request: &GatewayRequest) -> Value {
        match request {
            GatewayRequest::Decide { context, forced_tool, .. } => {
                let tool_choice = match forced_tool {
                    Some(name) => json!({ "type": "function", "function": { "name": name } }),
                    None => json!("required"),
                };
                json!({
                    "model": self.model,
                    "temperature": 0,
                    "messages": [
                        { "role": "system", "content": SYSTEM_PROMPT },
                        { "role": "user", "content": context.to_text() },
                    ],
                    "tools": *self.tools,
                    "tool_choice": tool_choice,
                })
            }
            GatewayRequest::Judge { claim, body, .. } => json!({
                "model": self.model,
                "temperature": 0,
                "messages": [
                    { "role": "system", "content": JUDGE_PROMPT },
                    { "role": "user", "content": format!("Claim:\n{claim}\n\nCandidate text:\n{body}") },
                ],
                "tools": Self::judge_tool(),
                "tool_choice": { "type": "function", "function": { "name": "report_evidence" } },
            }),
        }
    }

    /// Extracts the first tool call from a chat-completions response.
    pub fn parse_response(response: &Value) -> Result<ToolCall, GatewayError> {
        let call = response
            .pointer("/choices/0/message/tool_calls/0/function")
            .ok_or_else(|| GatewayError::Malformed("response has no tool call".into()))?;
        let name = call
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Malformed("tool call has no name".into()))?;
        let arguments = match call.get("arguments") {
            Some(Value::String(raw)) => serde_json::from_str(raw)
                .map_err(|e| GatewayError::Malformed(format!("tool arguments are not JSON: {e}")))?,
            Some(v @ Value::Object(_)) => v.clone(),
            _ => json!({}),
        };
        Ok(ToolCall::new(name, arguments))
    }
}

#[async_trait]
impl ModelGateway for OpenAiGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        self.bucket.acquire().await;
        let mut http = self.http.post(&self.url).json(&self.payload(request));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().await.map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Unavailable(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(GatewayError::Unavailable(format!("gateway returned HTTP {}", status.as_u16())));
        }
        let body: Value = response.json().await.map_err(|e| GatewayError::Malformed(e.to_string()))?;
        Self::parse_response(&body)
    }
}
