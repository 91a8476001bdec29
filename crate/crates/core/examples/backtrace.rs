//! Traces a sentence of a finished report back to the raw pages that
//! support it and prints the evidence tree.
//!
//! ```text
//! cargo run --example backtrace
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use research_engine::backtrace::{SubstringJudge, TraceRequest, TraceResult};
use research_engine::persistence::{ConfigSnapshot, Recorder};
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::span::TextSpan;
use research_engine::tools::{FixtureCorpus, FixtureTools, ScriptedGateway};

fn print_children(result: &TraceResult, parent: Option<usize>, indent: usize) {
    for finding in result.children(parent) {
        let terminal = finding.terminal.map(|t| format!(" [{t:?}]")).unwrap_or_default();
        println!(
            "{:indent$}{} @{}..{}{terminal}",
            "", finding.supporting_unit, finding.evidence_span.start, finding.evidence_span.end
        );
        println!("{:indent$}  \"{}\"", "", finding.evidence_quote);
        print_children(result, Some(finding.id), indent + 2);
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/efficacy/corpus.toml");
    let corpus = Arc::new(FixtureCorpus::load(&path)?);
    let mut run = ResearchRun::new(
        Recorder::in_memory("backtrace", ConfigSnapshot::new(RunConfig::default())),
        Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        Arc::new(FixtureTools::new(corpus)),
    );
    run.user_message("Survey the W26 robotics companies: what does each build, and who are its customers?", vec![])?;
    run.run(100).await?;

    let note = run.state().final_note().ok_or_else(|| anyhow::anyhow!("run produced no report"))?.clone();
    // the first cited line of the report
    let line = note.body.lines().find(|l| l.contains("[^I")).unwrap_or(&note.body);
    let start = note.body.find(line).unwrap_or(0);
    let request = TraceRequest::from_span(run.state(), note.id, TextSpan::at(start, line))?;

    let result = run.trace(&request, &SubstringJudge).await?;
    println!("claim in {}: \"{line}\"", note.id);
    if let Some(terminal) = result.root_terminal {
        println!("no support found: {terminal:?}");
    }
    print_children(&result, None, 2);
    println!("{} judge calls, depth {}", result.judged.len(), result.max_depth());
    Ok(())
}
