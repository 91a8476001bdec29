#![allow(dead_code)]

use std::sync::Arc;

use research_engine::persistence::{ConfigSnapshot, Recorder};
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::tools::{FixtureCorpus, FixtureTools, ModelGateway, ScriptedGateway, SearchEntry, ToolCall};
use serde_json::{json, Value};

pub fn call(tool: &str, args: Value) -> ToolCall {
    ToolCall::new(tool, args)
}

pub fn search(query: &str) -> ToolCall {
    call("web_search", json!({ "narration": format!("Searching for {query}."), "query": query }))
}

pub fn scrape(url: &str) -> ToolCall {
    call("scrape_webpage", json!({ "narration": format!("Reading {url}."), "url": url }))
}

pub fn note(inputs: &[u64], body: &str, summary: bool) -> ToolCall {
    call(
        "create_note",
        json!({
            "narration": "Writing a note.",
            "inputs": inputs,
            "requirement": if summary { "progress summary" } else { "note" },
            "body": body,
            "progress_summary": summary,
        }),
    )
}

pub fn finish() -> ToolCall {
    call("finish", json!({ "narration": "Done." }))
}

/// Small corpus: one query with three results, two pages, one 404.
pub fn small_corpus() -> FixtureCorpus {
    FixtureCorpus::new()
        .with_search(
            "yc w26 list",
            vec![
                SearchEntry {
                    title: "YC W26 directory".into(),
                    url: "https://example.org/w26".into(),
                    snippet: "All companies".into(),
                },
                SearchEntry {
                    title: "W26 tracker".into(),
                    url: "https://example.org/tracker".into(),
                    snippet: "Launches".into(),
                },
                SearchEntry {
                    title: "W26 demo day".into(),
                    url: "https://example.org/demo".into(),
                    snippet: "Recap".into(),
                },
            ],
        )
        .with_page("https://example.org/w26", "W26 directory\nAcme builds rockets. Globex sells widgets.")
        .with_page("https://example.org/tracker", "Tracker\nAcme launched on January 5.")
        .with_page_error("https://example.org/missing", 404)
}

pub fn scripted_run(corpus: FixtureCorpus, config: RunConfig) -> ResearchRun {
    let corpus = Arc::new(corpus);
    let gateway: Arc<dyn ModelGateway> = Arc::new(ScriptedGateway::new(Arc::clone(&corpus)));
    run_with(gateway, corpus, config)
}

pub fn run_with(gateway: Arc<dyn ModelGateway>, corpus: Arc<FixtureCorpus>, config: RunConfig) -> ResearchRun {
    let recorder = Recorder::in_memory("test-run", ConfigSnapshot::new(config));
    ResearchRun::new(recorder, gateway, Arc::new(FixtureTools::new(corpus)))
}

pub fn engine_with(
    corpus: FixtureCorpus,
    config: research_engine::service::EngineConfig,
) -> research_engine::service::Engine {
    use research_engine::backtrace::SubstringJudge;
    use research_engine::service::{Backends, Engine};
    let corpus = Arc::new(corpus);
    let backends = Backends {
        gateway: Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        tools: Arc::new(FixtureTools::new(corpus)),
        judge: Arc::new(SubstringJudge),
    };
    Engine::new(config, backends)
}

/// Drains a subscription until it ends, failing after ten seconds.
pub async fn drain(mut sub: research_engine::service::Subscription) -> Vec<research_engine::service::ServerMessage> {
    let mut out = Vec::new();
    let deadline = std::time::Duration::from_secs(10);
    while let Some(message) = tokio::time::timeout(deadline, sub.next()).await.expect("subscription stalled") {
        out.push(message);
    }
    out
}

pub fn protocol_validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(research_engine::service::PROTOCOL_SCHEMA).expect("schema is JSON");
    jsonschema::validator_for(&schema).expect("schema compiles")
}

/// Panics with every violation if `message` does not match the schema.
pub fn assert_valid(validator: &jsonschema::Validator, message: &Value) {
    let errors: Vec<String> = validator.iter_errors(message).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{message}\n{}", errors.join("\n"));
}
pub mod random;
