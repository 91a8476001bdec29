//! Drives one scripted research run to completion without a server and
//! prints each action followed by the final answer.
//!
//! ```text
//! cargo run --example headless_run
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use research_engine::persistence::{ConfigSnapshot, Recorder};
use research_engine::reduction::action_summary;
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::tools::{FixtureCorpus, FixtureTools, ScriptedGateway};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/bench/corpus.toml");
    let corpus = Arc::new(FixtureCorpus::load(&path)?);
    let recorder = Recorder::in_memory("headless", ConfigSnapshot::new(RunConfig::default()));
    let mut run = ResearchRun::new(
        recorder,
        Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        Arc::new(FixtureTools::new(corpus)),
    );

    run.user_message("Which W26 company builds reusable rockets?", vec![])?;
    let outcome = run.run(50).await?;

    for action in &run.state().actions {
        let marker = if action.is_milestone() { "*" } else { " " };
        println!("{marker} {:<4} {}", action.id.to_string(), action_summary(action));
    }
    println!("outcome: {outcome:?}");
    if let Some(note) = run.state().final_note() {
        println!("\n{}", note.body);
    }
    Ok(())
}
