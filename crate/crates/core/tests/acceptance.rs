//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any criterion fails. Thresholds are pinned below.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use common::random::{check_state, oracle_tree, random_dag, sentinel, RandomRun, SENTINELS};
use common::{drain, engine_with, finish, note, protocol_validator, scrape, search, small_corpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use research_engine::backtrace::{trace, SubstringJudge, Terminal, TraceRequest};
use research_engine::bench::{load_tasks, run_bench, BenchConfig, Grader, TaskStatus};
use research_engine::model::{ActionKind, Actor, InfoKind, RunState, RunStatus};
use research_engine::persistence::{load_dir, replay, replay_dir, ConfigSnapshot, EventKind, Recorder, RunArchive};
use research_engine::reduction::{estimate_tokens, render_context, ReductionRule};
use research_engine::runtime::{InterruptHandle, ResearchRun, RunConfig, RunOutcome};
use research_engine::service::{expand_event, EngineConfig};
use research_engine::span::TextSpan;
use research_engine::tools::{
    FixtureCorpus, FixtureTools, GatewayError, GatewayRequest, ModelGateway, ScriptedGateway, ToolCall,
};

const RANDOM_RUNS: u64 = 1_000;
const MAX_RUN_ACTIONS: usize = 200;
const RANDOM_SUITE_BUDGET: Duration = Duration::from_secs(60);
const RANDOM_DAGS: u64 = 200;
const MAX_DAG_ACTIONS: usize = 50;
const MAX_ACTIONS_AFTER_INTERRUPT: usize = 1;
const MILESTONE_SETTINGS: [u32; 3] = [1, 5, 8];
const ROUNDS_SLACK: u32 = 2;
const MAX_CONTEXT_RATIO: f64 = 0.40;
const EFFICACY_MIN_ACTIONS: usize = 30;
const EFFICACY_MIN_SESSIONS: usize = 3;
const EFFICACY_MIN_BODY_CHARS: usize = 2_000;

type Outcome = Result<String, String>;

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(path)
}

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

/// Criteria 1 to 3 share one corpus of random runs.
struct RandomSuite {
    violations: [Vec<String>; 3],
    states: usize,
    actions: usize,
    elapsed: Duration,
}

async fn random_suite() -> RandomSuite {
    let started = Instant::now();
    let mut violations: [Vec<String>; 3] = Default::default();
    let (mut states, mut actions) = (0, 0);
    for seed in 0..RANDOM_RUNS {
        let mut random = RandomRun::new(seed);
        let target = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed).random_range(1..=MAX_RUN_ACTIONS);
        let mut previous = Vec::new();
        let mut moves = 0;
        while random.run.state().actions.len() < target && moves < 4 * MAX_RUN_ACTIONS {
            random.advance().await;
            moves += 1;
            let state = random.run.state();
            states += 1;
            for (criterion, message) in check_state(state, &previous) {
                let list = &mut violations[criterion as usize - 1];
                if list.len() < 5 {
                    list.push(format!("seed {seed}, A{}: {message}", state.actions.len() - 1));
                }
            }
            previous = state.units.iter().filter(|u| u.minimized).map(|u| u.id).collect();
        }
        // the recorded log replays to the same flags
        let replayed = replay(random.run.recorder().archive()).map_err(|e| e.to_string());
        if replayed.as_ref().map(|s| s.canonical_json()) != Ok(random.run.state().canonical_json()) {
            violations[0].push(format!("seed {seed}: replay differs"));
        }
        actions += random.run.state().actions.len();
    }
    RandomSuite { violations, states, actions, elapsed: started.elapsed() }
}

fn criterion_1(suite: &RandomSuite) -> Outcome {
    ensure(suite.violations[0].is_empty(), || suite.violations[0].join("; "))?;
    ensure(suite.elapsed < RANDOM_SUITE_BUDGET, || format!("suite took {:?}", suite.elapsed))?;
    Ok(format!(
        "{RANDOM_RUNS} runs, {} actions, {} states checked, 0 mismatches, {:.1}s (limit {}s)",
        suite.actions,
        suite.states,
        suite.elapsed.as_secs_f64(),
        RANDOM_SUITE_BUDGET.as_secs()
    ))
}

fn criterion_2(suite: &RandomSuite) -> Outcome {
    ensure(suite.violations[1].is_empty(), || suite.violations[1].join("; "))?;
    Ok(format!("{} states, 0 milestone minimizations, 0 shrinking steps", suite.states))
}

fn criterion_3(suite: &RandomSuite) -> Outcome {
    ensure(suite.violations[2].is_empty(), || suite.violations[2].join("; "))?;
    Ok(format!("{} states matched the milestone-enumeration oracle", suite.states))
}

async fn criterion_4() -> Outcome {
    let mut traced = 0;
    let mut nodes = 0;
    let depth_limit = MAX_DAG_ACTIONS as u32 + 1;
    for seed in 0..RANDOM_DAGS {
        let state = random_dag(seed, MAX_DAG_ACTIONS);
        // every processed unit carrying a sentinel is a root
        for unit in state.units.iter().filter(|u| u.kind == InfoKind::Processed) {
            for k in 0..SENTINELS {
                let claim = sentinel(k);
                let Some(start) = unit.body.find(&claim) else { continue };
                let request = TraceRequest::from_span(&state, unit.id, TextSpan::at(start, &claim)).unwrap();
                let result = trace(&state, &request, &SubstringJudge, depth_limit).await.map_err(|e| e.to_string())?;
                let got: Vec<_> = result
                    .findings
                    .iter()
                    .map(|f| {
                        (
                            f.parent,
                            f.supporting_unit,
                            f.evidence_span.start,
                            f.depth,
                            f.terminal == Some(Terminal::RawReached),
                        )
                    })
                    .collect();
                let expected = oracle_tree(&state, unit.id, &claim);
                ensure(got == expected, || format!("seed {seed}, {} claim {k}: {got:?} vs {expected:?}", unit.id))?;
                ensure(!expected.is_empty() && result.root_terminal.is_none(), || format!("seed {seed}: empty tree"))?;
                let leaves_raw = result.leaves().all(|f| f.terminal == Some(Terminal::RawReached))
                    && result
                        .findings
                        .iter()
                        .all(|f| f.terminal.is_some() == result.findings.iter().all(|c| c.parent != Some(f.id)));
                ensure(leaves_raw, || format!("seed {seed}, {}: a leaf is not RawReached", unit.id))?;
                ensure(result.findings.iter().all(|f| f.evidence_quote == claim), || {
                    format!("seed {seed}: quote drift")
                })?;
                traced += 1;
                nodes += result.findings.len();
            }
        }
    }
    ensure(traced > RANDOM_DAGS as usize, || format!("only {traced} traces"))?;
    Ok(format!("{RANDOM_DAGS} DAGs, {traced} traces, {nodes} nodes equal to the oracle, all leaves RawReached"))
}

const INTERRUPT_REQUEST: &str = "Interrupt me at any point.";

fn interrupt_corpus() -> FixtureCorpus {
    let steps = vec![
        search("yc w26 list"),
        scrape("https://example.org/w26"),
        scrape("https://example.org/tracker"),
        note(&[2, 3], "Acme builds rockets.[^I2] Acme launched on January 5.[^I3]", false),
        search("yc w26 list"),
        scrape("https://example.org/missing"),
        note(&[4], "Acme launched on January 5.[^I4]", true),
        search("yc w26 list"),
        scrape("https://example.org/w26"),
        note(&[9], "Globex sells widgets.[^I9]", false),
        finish(),
    ];
    small_corpus().with_script(INTERRUPT_REQUEST, steps)
}

/// Raises the interrupt while answering the `at`-th decision, i.e. while
/// that step is in flight.
struct InterruptingGateway {
    inner: ScriptedGateway,
    at: usize,
    calls: AtomicUsize,
    handle: OnceLock<InterruptHandle>,
    actions: Arc<AtomicUsize>,
    raised_with: Arc<Mutex<Option<usize>>>,
}

#[async_trait]
impl ModelGateway for InterruptingGateway {
    async fn complete(&self, request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.at {
            *self.raised_with.lock().unwrap() = Some(self.actions.load(Ordering::SeqCst));
            self.handle.get().unwrap().interrupt();
        }
        self.inner.complete(request).await
    }
}

fn check_interrupted(state: &RunState, archive: &RunArchive, raised_at: usize) -> Result<usize, String> {
    let interrupt =
        state.actions.iter().find(|a| a.kind() == ActionKind::UserInterrupt).ok_or("no UserInterrupt recorded")?;
    let after = state.actions[raised_at..interrupt.id.0 as usize].iter().filter(|a| a.actor() == Actor::Agent).count();
    ensure(after <= MAX_ACTIONS_AFTER_INTERRUPT, || format!("{after} agent actions after interrupt()"))?;
    ensure(state.sessions.iter().any(|s| s.start == interrupt.id), || format!("{} opened no session", interrupt.id))?;
    let stale: Vec<_> = state
        .units
        .iter()
        .filter(|u| u.producer < interrupt.id && !state.actions[u.producer.0 as usize].is_milestone())
        .collect();
    ensure(stale.iter().all(|u| u.minimized), || "boundary reduction skipped a unit".into())?;
    let boundary_event = archive
        .events
        .iter()
        .any(|e| matches!(&e.kind, EventKind::MinimizationApplied { rule: ReductionRule::SessionBoundary, .. }));
    ensure(boundary_event || stale.is_empty(), || "no boundary reduction event".into())?;
    ensure(state.status == RunStatus::AwaitingUser, || format!("status {:?}", state.status))?;
    Ok(after)
}

async fn criterion_5() -> Outcome {
    let corpus = Arc::new(interrupt_corpus());
    let script_len = 11;
    let mut cases = 0;
    let mut worst = 0;
    for at in 0..script_len {
        // interrupt raised while the step is in flight
        let actions = Arc::new(AtomicUsize::new(0));
        let raised_with = Arc::new(Mutex::new(None));
        let gateway = Arc::new(InterruptingGateway {
            inner: ScriptedGateway::new(Arc::clone(&corpus)),
            at,
            calls: AtomicUsize::new(0),
            handle: OnceLock::new(),
            actions: Arc::clone(&actions),
            raised_with: Arc::clone(&raised_with),
        });
        let mut recorder = Recorder::in_memory("interrupt", ConfigSnapshot::new(RunConfig::default()));
        let counter = Arc::clone(&actions);
        recorder.add_listener(move |_, state| counter.store(state.actions.len(), Ordering::SeqCst));
        let mut run = ResearchRun::new(recorder, gateway.clone(), Arc::new(FixtureTools::new(Arc::clone(&corpus))));
        gateway.handle.set(run.interrupt_handle()).ok();
        run.user_message(INTERRUPT_REQUEST, vec![]).unwrap();
        let outcome = run.run(100).await.map_err(|e| e.to_string())?;
        let raised = raised_with.lock().unwrap().take();
        match (outcome, raised) {
            (RunOutcome::Interrupted, Some(raised)) => {
                let after = check_interrupted(run.state(), run.recorder().archive(), raised)
                    .map_err(|e| format!("in-flight interrupt at step {at}: {e}"))?;
                worst = worst.max(after);
            }
            // a Finish step completes the run before the boundary check
            (RunOutcome::Finished, Some(_)) if at == script_len - 1 => {}
            (outcome, raised) => return Err(format!("step {at}: {outcome:?}, raised {raised:?}")),
        }
        cases += 1;

        // interrupt raised between steps
        let mut run = ResearchRun::new(
            Recorder::in_memory("interrupt", ConfigSnapshot::new(RunConfig::default())),
            Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
            Arc::new(FixtureTools::new(Arc::clone(&corpus))),
        );
        run.user_message(INTERRUPT_REQUEST, vec![]).unwrap();
        run.run(at as u64).await.map_err(|e| e.to_string())?;
        if run.status() != RunStatus::Running {
            continue;
        }
        let before = run.state().actions.len();
        ensure(run.interrupt(), || format!("step {at}: interrupt() refused"))?;
        ensure(run.run(100).await.map_err(|e| e.to_string())? == RunOutcome::Interrupted, || "not interrupted".into())?;
        let after = check_interrupted(run.state(), run.recorder().archive(), before)
            .map_err(|e| format!("boundary interrupt at step {at}: {e}"))?;
        worst = worst.max(after);
        cases += 1;
    }
    Ok(format!("{cases} injected interrupts, at most {worst} agent action after interrupt() (limit {MAX_ACTIONS_AFTER_INTERRUPT})"))
}

async fn criterion_6() -> Outcome {
    let mut details = Vec::new();
    for n in MILESTONE_SETTINGS {
        let request = "Never summarize.";
        let corpus = Arc::new(small_corpus().with_script(request, vec![search("yc w26 list"); 60]));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut recorder = Recorder::in_memory(
            "rounds",
            ConfigSnapshot::new(RunConfig { milestone_rounds: n, ..RunConfig::default() }),
        );
        let observed = Arc::clone(&peak);
        recorder.add_listener(move |_, state| {
            observed.fetch_max(state.rounds_since_milestone as usize, Ordering::SeqCst);
        });
        let mut run = ResearchRun::new(
            recorder,
            Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
            Arc::new(FixtureTools::new(corpus)),
        );
        run.user_message(request, vec![]).unwrap();
        run.run(80).await.map_err(|e| e.to_string())?;
        let peak = peak.load(Ordering::SeqCst) as u32;
        let coerced = run.stats().coerced_summaries;
        ensure(peak <= n + ROUNDS_SLACK, || format!("N={n}: rounds reached {peak}"))?;
        ensure(coerced > 0, || format!("N={n}: no summary was coerced"))?;
        details.push(format!("N={n}: peak {peak} (limit {}), {coerced} coerced", n + ROUNDS_SLACK));
    }
    Ok(details.join("; "))
}

const EFFICACY_REQUEST: &str = "Survey the W26 robotics companies: what does each build, and who are its customers?";

fn efficacy_corpus() -> FixtureCorpus {
    FixtureCorpus::load(&fixture("efficacy/corpus.toml")).expect("efficacy fixture loads")
}

async fn scripted(corpus: FixtureCorpus, request: &str, recorder: Recorder) -> ResearchRun {
    let corpus = Arc::new(corpus);
    let mut run = ResearchRun::new(
        recorder,
        Arc::new(ScriptedGateway::new(Arc::clone(&corpus))),
        Arc::new(FixtureTools::new(corpus)),
    );
    run.user_message(request, vec![]).unwrap();
    run.run(500).await.unwrap();
    run
}

async fn criterion_7() -> Outcome {
    let recorder = Recorder::in_memory("efficacy", ConfigSnapshot::new(RunConfig::default()));
    let run = scripted(efficacy_corpus(), EFFICACY_REQUEST, recorder).await;
    let state = run.state();
    ensure(state.status == RunStatus::Finished, || format!("status {:?}", state.status))?;
    ensure(state.actions.len() >= EFFICACY_MIN_ACTIONS, || format!("{} actions", state.actions.len()))?;
    ensure(state.sessions.len() >= EFFICACY_MIN_SESSIONS, || format!("{} sessions", state.sessions.len()))?;
    let short = state
        .units
        .iter()
        .filter(|u| u.kind == InfoKind::Source && u.body.chars().count() < EFFICACY_MIN_BODY_CHARS)
        .count();
    ensure(short == 0, || format!("{short} source bodies under {EFFICACY_MIN_BODY_CHARS} chars"))?;
    ensure(run.stats().coerced_summaries == 0, || "fixture needed coerced summaries".into())?;
    let budget = usize::MAX;
    let reduced = estimate_tokens(&render_context(state, budget).to_text());
    let mut unreduced_state = state.clone();
    unreduced_state.units.iter_mut().for_each(|u| u.minimized = false);
    let unreduced = estimate_tokens(&render_context(&unreduced_state, budget).to_text());
    let ratio = reduced as f64 / unreduced as f64;
    ensure(ratio <= MAX_CONTEXT_RATIO, || format!("ratio {ratio:.3}"))?;
    Ok(format!(
        "{} actions, {} sessions, {reduced} of {unreduced} tokens = {:.1}% (limit {:.0}%)",
        state.actions.len(),
        state.sessions.len(),
        ratio * 100.0,
        MAX_CONTEXT_RATIO * 100.0
    ))
}

/// Golden fixture runs: the bench tasks and the efficacy survey.
fn golden() -> Vec<(String, FixtureCorpus, String)> {
    let bench = FixtureCorpus::load(&fixture("bench/corpus.toml")).unwrap();
    let mut runs: Vec<_> = load_tasks(&fixture("bench/tasks.jsonl"))
        .unwrap()
        .into_iter()
        .map(|t| (t.id, bench.clone(), t.question))
        .collect();
    runs.push(("efficacy".into(), efficacy_corpus(), EFFICACY_REQUEST.into()));
    runs
}

async fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut events = 0;
    for (name, corpus, request) in golden() {
        let first =
            scripted(corpus.clone(), &request, Recorder::in_memory(&name, ConfigSnapshot::new(RunConfig::default())))
                .await;
        let second =
            scripted(corpus.clone(), &request, Recorder::in_memory(&name, ConfigSnapshot::new(RunConfig::default())))
                .await;
        let archive = first.recorder().archive();
        let canonical = first.state().canonical_json();
        let replayed = replay(archive).map_err(|e| e.to_string())?;
        ensure(replayed.canonical_json() == canonical, || format!("{name}: replay state differs"))?;
        ensure(second.state().canonical_json() == canonical, || format!("{name}: re-execution state differs"))?;
        ensure(second.recorder().archive().events_jsonl() == archive.events_jsonl(), || {
            format!("{name}: event logs differ")
        })?;

        let mut files = Vec::new();
        for copy in ["a", "b"] {
            let path = dir.path().join(format!("{name}-{copy}"));
            let recorder = Recorder::create_dir(&path, name.clone(), ConfigSnapshot::new(RunConfig::default()))
                .map_err(|e| e.to_string())?;
            drop(scripted(corpus.clone(), &request, recorder).await);
            let from_disk = replay_dir(&path).map_err(|e| e.to_string())?;
            ensure(from_disk.canonical_json() == canonical, || format!("{name}: disk replay differs"))?;
            let bytes = ["events.jsonl", "bodies.jsonl"].map(|f| std::fs::read(path.join(f)).unwrap());
            files.push(bytes);
        }
        ensure(files[0] == files[1], || format!("{name}: archived files differ between executions"))?;
        events += archive.events.len();
    }
    Ok(format!("4 golden runs, {events} events, byte-identical state, logs and archive files"))
}

async fn criterion_9() -> Outcome {
    let tasks = load_tasks(&fixture("bench/tasks.jsonl")).map_err(|e| e.to_string())?;
    ensure(tasks.len() == 3 && tasks.iter().all(|t| t.grader == Grader::ExactMatch), || "task file changed".into())?;
    let corpus = Arc::new(FixtureCorpus::load(&fixture("bench/corpus.toml")).map_err(|e| e.to_string())?);
    let mut reports = Vec::new();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for copy in 0..2 {
        let config = BenchConfig { out_dir: Some(dir.path().join(format!("out-{copy}"))), ..BenchConfig::default() };
        let gateway = Arc::new(ScriptedGateway::new(Arc::clone(&corpus)));
        let (report, _) = run_bench(&tasks, &config, gateway, Arc::new(FixtureTools::new(Arc::clone(&corpus)))).await;
        reports.push(report.to_json());
        ensure(report.tasks.iter().all(|t| t.status == TaskStatus::Correct), || report.summary())?;
        for task in &tasks {
            let archive =
                load_dir(&dir.path().join(format!("out-{copy}/runs/{}", task.id))).map_err(|e| e.to_string())?;
            let interventions = archive
                .events
                .iter()
                .filter(|e| match &e.kind {
                    EventKind::ActionAppended { action, .. } => action.actor() == Actor::User && action.id.0 > 0,
                    EventKind::StatusChanged { to, .. } => *to == RunStatus::AwaitingUser,
                    _ => false,
                })
                .count();
            ensure(interventions == 0, || format!("{}: {interventions} user-intervention events", task.id))?;
        }
    }
    ensure(reports[0] == reports[1], || "report bytes differ between executions".into())?;
    Ok("3/3 ExactMatch, 0 user-intervention events, identical report.json bytes".into())
}

async fn criterion_10() -> Outcome {
    let validator = protocol_validator();
    let mut messages = 0;
    for (name, corpus, request) in golden() {
        let run =
            scripted(corpus, &request, Recorder::in_memory(&name, ConfigSnapshot::new(RunConfig::default()))).await;
        let archive = run.recorder().archive();
        for event in &archive.events {
            for message in expand_event(&name, event, &archive.bodies) {
                let value = serde_json::to_value(&message).unwrap();
                let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
                ensure(errors.is_empty(), || format!("{name} seq {}: {}", event.seq, errors.join("; ")))?;
                messages += 1;
            }
        }
    }

    let engine = engine_with(efficacy_corpus(), EngineConfig::default());
    let run = engine.start_run(EFFICACY_REQUEST).map_err(|e| e.to_string())?;
    let full = drain(engine.subscribe(&run, 0).map_err(|e| e.to_string())?).await;
    let archive = engine.archive(&run).map_err(|e| e.to_string())?;
    let offline: Vec<_> = archive.events.iter().flat_map(|e| expand_event(&run, e, &archive.bodies)).collect();
    ensure(full == offline, || "live stream differs from the expanded log".into())?;
    let len = archive.events.len() as u64;
    for k in 0..=len + 1 {
        let suffix = drain(engine.subscribe(&run, k).map_err(|e| e.to_string())?).await;
        let seqs: BTreeSet<u64> = suffix.iter().filter_map(|m| m.seq).collect();
        let expected: BTreeSet<u64> = (k..len).collect();
        ensure(seqs == expected, || format!("from {k}: got {} events", seqs.len()))?;
        ensure(suffix.iter().all(|m| m.seq.is_some_and(|s| s >= k)), || format!("from {k}: earlier event leaked"))?;
        let expected_messages: Vec<_> = full.iter().filter(|m| m.seq.unwrap() >= k).cloned().collect();
        ensure(suffix == expected_messages, || format!("from {k}: messages differ"))?;
    }
    Ok(format!("{messages} golden messages valid; subscribe-from-k exact for k in 0..={}", len + 1))
}

fn main() {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let results: Vec<(u32, &str, Outcome)> = runtime.block_on(async {
        let suite = random_suite().await;
        vec![
            (1, "reduction-rule equivalence", criterion_1(&suite)),
            (2, "milestone immunity and monotonicity", criterion_2(&suite)),
            (3, "session partition", criterion_3(&suite)),
            (4, "backtrace oracle equivalence", criterion_4().await),
            (5, "interrupt latency", criterion_5().await),
            (6, "milestone-trigger bound", criterion_6().await),
            (7, "context-size efficacy", criterion_7().await),
            (8, "replay determinism", criterion_8().await),
            (9, "bench harness", criterion_9().await),
            (10, "protocol conformance", criterion_10().await),
        ]
    });
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
