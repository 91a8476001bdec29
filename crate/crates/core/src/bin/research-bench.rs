//! Runs a benchmark task file against fixture or live backends.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use research_engine::bench::{load_tasks, run_bench, write_outputs, BenchConfig};
use research_engine::runtime::{RunConfig, DEFAULT_MILESTONE_ROUNDS};
use research_engine::tools::{
    FixtureCorpus, FixtureTools, LiveConfig, LiveTools, ModelGateway, OpenAiGateway, ResearchTools, ScriptedGateway,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    /// Scripted decisions and canned search results from `--corpus`.
    Fixture,
    /// Search API and chat-completions model configured through the environment.
    Live,
}

#[derive(Debug, Parser)]
#[command(version, about = "Run research tasks and grade the answers")]
struct Args {
    /// Task file, one JSON object per line.
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_enum, default_value = "fixture")]
    backend: Backend,
    /// Fixture corpus (TOML); required for the fixture backend.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    max_steps: u64,
    #[arg(long, default_value_t = DEFAULT_MILESTONE_ROUNDS)]
    milestone_rounds: u32,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
}

fn backends(args: &Args) -> anyhow::Result<(Arc<dyn ModelGateway>, Arc<dyn ResearchTools>)> {
    match args.backend {
        Backend::Fixture => {
            let Some(path) = &args.corpus else { bail!("--corpus is required with --backend fixture") };
            let corpus = Arc::new(FixtureCorpus::load(path).with_context(|| format!("loading {}", path.display()))?);
            Ok((Arc::new(ScriptedGateway::new(Arc::clone(&corpus))), Arc::new(FixtureTools::new(corpus))))
        }
        Backend::Live => {
            let config = LiveConfig::from_env();
            Ok((Arc::new(OpenAiGateway::new(&config)), Arc::new(LiveTools::new(&config))))
        }
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    if args.milestone_rounds == 0 {
        bail!("--milestone-rounds must be at least 1");
    }
    let tasks = load_tasks(&args.tasks).with_context(|| format!("loading {}", args.tasks.display()))?;
    let (gateway, tools) = backends(&args)?;
    let config = BenchConfig {
        run: RunConfig { milestone_rounds: args.milestone_rounds, ..RunConfig::default() },
        max_steps: args.max_steps,
        concurrency: args.concurrency,
        out_dir: Some(args.out.clone()),
    };
    let (report, timings) = run_bench(&tasks, &config, gateway, tools).await;
    write_outputs(&args.out, &report, &timings)?;
    print!("{}", report.summary());
    Ok(if report.errored > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}
