//! Starts a run on the in-process engine and prints its protocol stream as
//! JSON lines. With `--serve ADDR` it instead exposes the engine over
//! WebSocket at `ws://ADDR/ws`.
//!
//! ```text
//! cargo run --example service_stream
//! cargo run --example service_stream -- --serve 127.0.0.1:8787
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use research_engine::backtrace::SubstringJudge;
use research_engine::service::{serve, Backends, Engine, EngineConfig};
use research_engine::tools::{FixtureCorpus, FixtureTools, ScriptedGateway};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/bench/corpus.toml");
    let corpus = Arc::new(FixtureCorpus::load(&path)?);
    let backends = Backends {
        gateway: Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        tools: Arc::new(FixtureTools::new(corpus)),
        judge: Arc::new(SubstringJudge),
    };
    let engine = Engine::new(EngineConfig::default(), backends);

    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [flag, addr] = args.as_slice() {
        anyhow::ensure!(flag == "--serve", "usage: service_stream [--serve ADDR]");
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on ws://{}/ws", listener.local_addr()?);
        serve(listener, engine).await?;
        return Ok(());
    }

    let run = engine.start_run("Which W26 company builds reusable rockets?")?;
    let mut stream = engine.subscribe(&run, 0)?;
    while let Some(message) = stream.next().await {
        println!("{}", message.to_json());
    }
    println!("{}", engine.export(&run)?);
    Ok(())
}
