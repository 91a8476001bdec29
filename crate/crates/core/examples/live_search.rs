//! Runs one research request against live backends: a Serper-compatible
//! search API, plain HTTP scraping and an OpenAI-compatible chat model.
//!
//! ```text
//! RESEARCH_SEARCH_API_KEY=... RESEARCH_GATEWAY_API_KEY=... \
//!     cargo run --example live_search -- "Which W26 companies build robots?"
//! ```
//!
//! `RESEARCH_SEARCH_URL`, `RESEARCH_GATEWAY_URL` and `RESEARCH_MODEL`
//! override the endpoints and model. Set `RUST_LOG=research_engine=debug`
//! for request logging.

use std::sync::Arc;

use research_engine::persistence::{export_report, ConfigSnapshot, Recorder};
use research_engine::reduction::action_summary;
use research_engine::runtime::{ResearchRun, RunConfig, RunOutcome};
use research_engine::tools::{LiveConfig, LiveTools, OpenAiGateway};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let request = std::env::args().nth(1).unwrap_or_else(|| "Which W26 companies build robots?".to_string());
    let config = LiveConfig::from_env();
    if config.search_api_key.is_none() || config.gateway_api_key.is_none() {
        eprintln!("set RESEARCH_SEARCH_API_KEY and RESEARCH_GATEWAY_API_KEY to run against live backends");
        return Ok(());
    }

    let mut run = ResearchRun::new(
        Recorder::in_memory("live", ConfigSnapshot::new(RunConfig::default())),
        Arc::new(OpenAiGateway::new(&config)),
        Arc::new(LiveTools::new(&config)),
    );
    run.user_message(&request, vec![])?;
    let mut printed = 0;
    loop {
        let outcome = run.run(1).await?;
        for action in &run.state().actions[printed..] {
            println!("{} {}", action.id, action_summary(action));
        }
        printed = run.state().actions.len();
        match outcome {
            RunOutcome::MaxSteps => continue,
            RunOutcome::AwaitingUser { reason } => {
                println!("paused: {}", reason.unwrap_or_default());
                break;
            }
            RunOutcome::Finished | RunOutcome::Interrupted => break,
        }
    }
    if run.state().final_note().is_some() {
        println!("\n{}", export_report(run.recorder().archive())?);
    }
    Ok(())
}
