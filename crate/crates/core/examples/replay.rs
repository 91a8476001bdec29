//! Archives a run to disk, then rebuilds its state from the event log and
//! checks it against the live state.
//!
//! ```text
//! cargo run --example replay -- [archive-dir]
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use research_engine::persistence::{load_dir, replay_dir, ConfigSnapshot, Recorder};
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::tools::{FixtureCorpus, FixtureTools, ScriptedGateway};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let scratch = tempfile_dir()?;
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| scratch.join("w26-logistics"));

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/bench/corpus.toml");
    let corpus = Arc::new(FixtureCorpus::load(&path)?);
    let recorder = Recorder::create_dir(&dir, "w26-logistics".to_string(), ConfigSnapshot::new(RunConfig::default()))?;
    let mut run = ResearchRun::new(
        recorder,
        Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        Arc::new(FixtureTools::new(corpus)),
    );
    run.user_message("Which two W26 companies work on logistics hardware?", vec![])?;
    run.run(50).await?;
    let live = run.state().canonical_json();
    drop(run);

    let archive = load_dir(&dir)?;
    let replayed = replay_dir(&dir)?;
    println!("archive: {}", dir.display());
    println!("events: {}, bodies: {}", archive.events.len(), archive.bodies.len());
    println!("replayed state equals live state: {}", replayed.canonical_json() == live);
    Ok(())
}

fn tempfile_dir() -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("research-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
