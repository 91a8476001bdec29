//! Replays the efficacy fixture and shows how the rendered agent context
//! shrinks as notes and session boundaries minimize raw material.
//!
//! ```text
//! cargo run --example context_reduction
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use research_engine::model::RunState;
use research_engine::persistence::{replay_prefix, ConfigSnapshot, Recorder};
use research_engine::reduction::{estimate_tokens, render_context};
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::tools::{FixtureCorpus, FixtureTools, ScriptedGateway};

const REQUEST: &str = "Survey the W26 robotics companies: what does each build, and who are its customers?";

fn tokens(state: &RunState) -> usize {
    estimate_tokens(&render_context(state, usize::MAX).to_text())
}

fn unreduced(state: &RunState) -> RunState {
    let mut state = state.clone();
    state.units.iter_mut().for_each(|u| u.minimized = false);
    state
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/efficacy/corpus.toml");
    let corpus = Arc::new(FixtureCorpus::load(&path)?);
    let mut run = ResearchRun::new(
        Recorder::in_memory("efficacy", ConfigSnapshot::new(RunConfig::default())),
        Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        Arc::new(FixtureTools::new(corpus)),
    );
    run.user_message(REQUEST, vec![])?;
    run.run(100).await?;

    let archive = run.recorder().archive();
    println!("{:>6} {:>8} {:>10} {:>10}", "events", "actions", "reduced", "unreduced");
    for prefix in (0..=archive.events.len()).step_by(8) {
        let state = replay_prefix(archive, prefix)?;
        println!("{prefix:>6} {:>8} {:>10} {:>10}", state.actions.len(), tokens(&state), tokens(&unreduced(&state)));
    }

    let state = run.state();
    let (reduced, full) = (tokens(state), tokens(&unreduced(state)));
    println!(
        "\nfinal: {} sessions, {} of {} units minimized, {reduced}/{full} tokens ({:.1}%)",
        state.sessions.len(),
        state.units.iter().filter(|u| u.minimized).count(),
        state.units.len(),
        100.0 * reduced as f64 / full as f64
    );
    Ok(())
}
