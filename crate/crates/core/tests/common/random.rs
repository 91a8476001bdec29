//! Seeded random runs and dependency DAGs, plus the oracles that check them.
//! The oracles read only action parameters and unit kinds; they never call
//! the engine's reduction, session or backtrace code.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use research_engine::model::{
    ActionId, ActionKind, ActionParams, InfoKind, InformationUnit, QuotedRef, ResearchAction, RunState, RunStatus,
    UnitId,
};
use research_engine::persistence::{ConfigSnapshot, Recorder};
use research_engine::runtime::{ResearchRun, RunConfig};
use research_engine::span::TextSpan;
use research_engine::tools::{
    FixtureCorpus, FixtureTools, GatewayError, GatewayRequest, ModelGateway, SearchEntry, ToolCall,
};
use serde_json::json;

/// Hands out tool calls queued by the test driver; an empty queue is a
/// malformed response.
#[derive(Clone, Default)]
pub struct QueueGateway(pub Arc<Mutex<VecDeque<ToolCall>>>);

impl QueueGateway {
    pub fn push(&self, call: ToolCall) {
        self.0.lock().unwrap().push_back(call);
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }
}

#[async_trait]
impl ModelGateway for QueueGateway {
    async fn complete(&self, _request: &GatewayRequest) -> Result<ToolCall, GatewayError> {
        self.0.lock().unwrap().pop_front().ok_or_else(|| GatewayError::Malformed("no queued decision".into()))
    }
}

pub const QUERIES: [&str; 4] = ["alpha", "beta", "gamma", "nothing here"];
pub const URLS: [&str; 4] =
    ["https://example.org/a", "https://example.org/b", "https://example.org/c", "https://example.org/gone"];

pub fn random_corpus() -> FixtureCorpus {
    let mut corpus = FixtureCorpus::new();
    for q in &QUERIES[..3] {
        let entries = URLS[..3]
            .iter()
            .map(|u| SearchEntry { title: format!("{q} at {u}"), url: u.to_string(), snippet: format!("about {q}") })
            .collect();
        corpus = corpus.with_search(q, entries);
    }
    for (i, u) in URLS[..3].iter().enumerate() {
        corpus = corpus.with_page(u, &format!("Page {i}\nPage {i} says the value is {}.", i * 7));
    }
    corpus.with_page_error(URLS[3], 404)
}

fn note_call(rng: &mut ChaCha8Rng, state: &RunState) -> ToolCall {
    let n = state.units.len() as u64;
    let mut inputs: Vec<u64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..n)).collect();
    inputs.sort_unstable();
    inputs.dedup();
    let body: Vec<String> = inputs.iter().map(|i| format!("Claim from input {i}.[^I{i}]")).collect();
    json_call(
        "create_note",
        json!({
            "narration": "Writing a note.",
            "inputs": inputs,
            "requirement": "random note",
            "body": body.join(" "),
            "progress_summary": rng.random_bool(0.3),
        }),
    )
}

fn json_call(name: &str, args: serde_json::Value) -> ToolCall {
    ToolCall::new(name, args)
}

fn valid_call(rng: &mut ChaCha8Rng, state: &RunState) -> ToolCall {
    let r: f64 = rng.random();
    if r < 0.35 {
        json_call("web_search", json!({ "narration": "Searching.", "query": QUERIES.choose(rng).unwrap() }))
    } else if r < 0.7 {
        json_call("scrape_webpage", json!({ "narration": "Reading.", "url": URLS.choose(rng).unwrap() }))
    } else if r < 0.96 {
        note_call(rng, state)
    } else {
        json_call("finish", json!({ "narration": "Done." }))
    }
}

/// A run driven by seeded random decisions, user messages and interrupts.
pub struct RandomRun {
    pub run: ResearchRun,
    pub gateway: QueueGateway,
    rng: ChaCha8Rng,
}

impl RandomRun {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = RunConfig { milestone_rounds: rng.random_range(1..=8), ..RunConfig::default() };
        let gateway = QueueGateway::default();
        let recorder = Recorder::in_memory(format!("random-{seed}"), ConfigSnapshot::new(config));
        let tools = Arc::new(FixtureTools::new(Arc::new(random_corpus())));
        let mut run = ResearchRun::new(recorder, Arc::new(gateway.clone()), tools);
        run.user_message("Research the random topic.", vec![]).unwrap();
        Self { run, gateway, rng }
    }

    /// One driver move: an agent step, an interrupt, or a user message when
    /// the run is waiting.
    pub async fn advance(&mut self) {
        let state = self.run.state();
        if state.status != RunStatus::Running {
            let refs = if self.rng.random_bool(0.3) { random_ref(&mut self.rng, state) } else { Vec::new() };
            self.run.user_message("Keep going.", refs).unwrap();
            return;
        }
        let r: f64 = self.rng.random();
        if r < 0.04 {
            self.run.apply_interrupt().unwrap();
            return;
        }
        self.gateway.clear();
        if r < 0.08 {
            let unit = self.rng.random_range(0..state.units.len() as u64);
            self.gateway.push(json_call("read_information", json!({ "unit_id": unit })));
        } else if r < 0.12 {
            self.gateway.push(json_call("launch_rocket", json!({})));
            if self.rng.random_bool(0.5) {
                // rejected twice: the run escalates to the user
                self.gateway.push(json_call("launch_rocket", json!({})));
            }
        }
        let call = valid_call(&mut self.rng, state);
        self.gateway.push(call);
        self.run.step().await.unwrap();
    }
}

fn random_ref(rng: &mut ChaCha8Rng, state: &RunState) -> Vec<QuotedRef> {
    let unit = &state.units[rng.random_range(0..state.units.len())];
    let end = unit.body.len().min(12);
    if end == 0 || !unit.body.is_char_boundary(end) {
        return Vec::new();
    }
    vec![QuotedRef { unit: unit.id, span: TextSpan::new(0, end) }]
}

fn oracle_is_milestone(action: &ResearchAction) -> bool {
    match &action.params {
        ActionParams::UserMessage { .. } | ActionParams::UserInterrupt | ActionParams::Finish => true,
        ActionParams::CreateNote { progress_summary, .. } => *progress_summary,
        ActionParams::WebSearch { .. } | ActionParams::ScrapeWebpage { .. } => false,
    }
}

/// Minimized set implied by both rules over the whole history: a Search or
/// Source unit older than any note, or a unit with a non-milestone producer
/// that predates any session-opening milestone.
pub fn oracle_minimized(state: &RunState) -> Vec<UnitId> {
    let mut newest_note: Option<u64> = None;
    let mut newest_opening: Option<u64> = None;
    let mut produced: Vec<Option<u64>> = vec![None; state.actions.len()];
    for u in &state.units {
        produced[u.producer.0 as usize] = Some(u.id.0);
    }
    for (i, action) in state.actions.iter().enumerate() {
        if let ActionParams::CreateNote { .. } = action.params {
            newest_note = newest_note.max(produced[i]);
        }
        if oracle_is_milestone(action) && action.kind() != ActionKind::Finish {
            newest_opening = Some(i as u64);
        }
    }
    state
        .units
        .iter()
        .filter(|u| {
            let post = matches!(u.kind, InfoKind::Search | InfoKind::Source) && newest_note.is_some_and(|n| u.id.0 < n);
            let producer = &state.actions[u.producer.0 as usize];
            let boundary = !oracle_is_milestone(producer) && newest_opening.is_some_and(|m| u.producer.0 < m);
            post || boundary
        })
        .map(|u| u.id)
        .collect()
}

/// Sessions implied by enumerating milestones: every milestone closes the
/// open session, every milestone but `Finish` opens one.
pub fn oracle_sessions(state: &RunState) -> Vec<(ActionId, Option<ActionId>)> {
    let mut sessions: Vec<(ActionId, Option<ActionId>)> = Vec::new();
    for action in state.actions.iter().filter(|a| oracle_is_milestone(a)) {
        if let Some(open) = sessions.last_mut().filter(|s| s.1.is_none()) {
            open.1 = Some(action.id);
        }
        if action.kind() != ActionKind::Finish {
            sessions.push((action.id, None));
        }
    }
    sessions
}

/// Violations found in one observed state, tagged with the property they
/// break: 1 incremental flags against the oracle, 2 milestone immunity and
/// monotonicity, 3 session partition.
pub fn check_state(state: &RunState, previous_minimized: &[UnitId]) -> Vec<(u8, String)> {
    let mut errors = Vec::new();
    let flags: Vec<UnitId> = state.units.iter().filter(|u| u.minimized).map(|u| u.id).collect();
    let oracle = oracle_minimized(state);
    if flags != oracle {
        errors.push((1, format!("minimized {flags:?} but oracle says {oracle:?}")));
    }
    for u in &state.units {
        if u.minimized && oracle_is_milestone(&state.actions[u.producer.0 as usize]) {
            errors.push((2, format!("milestone unit {} minimized", u.id)));
        }
    }
    if let Some(lost) = previous_minimized.iter().find(|id| !flags.contains(id)) {
        errors.push((2, format!("{lost} was unminimized")));
    }
    let sessions: Vec<(ActionId, Option<ActionId>)> = state.sessions.iter().map(|s| (s.start, s.end)).collect();
    if sessions != oracle_sessions(state) {
        errors.push((3, format!("sessions {sessions:?} but oracle says {:?}", oracle_sessions(state))));
    }
    // tiling: consecutive sessions share a boundary unless a Finish closed the first
    for pair in state.sessions.windows(2) {
        let end = pair[0].end.expect("only the last session may be open");
        let finish = state.actions[end.0 as usize].kind() == ActionKind::Finish;
        if !(end == pair[1].start || finish && pair[1].start.0 == end.0 + 1) {
            errors.push((3, format!("sessions {} and {} do not tile", pair[0].id, pair[1].id)));
        }
    }
    errors
}

pub const SENTINELS: usize = 4;

pub fn sentinel(k: usize) -> String {
    format!("Sentinel fact {k} holds")
}

/// A dependency DAG with planted sentinel sentences. Raw units carry random
/// sentinels; every note cites 1 to 3 earlier units and repeats some of the
/// sentinels found in them, so evidence always bottoms out in raw units.
pub fn random_dag(seed: u64, max_actions: usize) -> RunState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = RunState::new();
    let total = rng.random_range(2..=max_actions);
    let mut carried: Vec<Vec<usize>> = Vec::new();
    for i in 0..total {
        let id = ActionId(i as u64);
        let uid = UnitId(i as u64);
        let (params, kind, sentinels) = if i == 0 {
            (ActionParams::UserMessage { text: "q".into(), refs: vec![] }, InfoKind::User, vec![])
        } else if i < 3 || rng.random_bool(0.45) {
            let sentinels: Vec<usize> = (0..SENTINELS).filter(|_| rng.random_bool(0.4)).collect();
            if rng.random_bool(0.5) {
                (ActionParams::WebSearch { query: format!("q{i}") }, InfoKind::Search, sentinels)
            } else {
                (ActionParams::ScrapeWebpage { url: format!("https://example.org/{i}") }, InfoKind::Source, sentinels)
            }
        } else {
            let mut inputs: Vec<u64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..i as u64)).collect();
            inputs.sort_unstable();
            inputs.dedup();
            let mut sentinels: Vec<usize> =
                inputs.iter().flat_map(|&u| carried[u as usize].clone()).filter(|_| rng.random_bool(0.8)).collect();
            sentinels.sort_unstable();
            sentinels.dedup();
            let params = ActionParams::CreateNote {
                inputs: inputs.into_iter().map(UnitId).collect(),
                requirement: "r".into(),
                progress_summary: rng.random_bool(0.2),
            };
            (params, InfoKind::Processed, sentinels)
        };
        let mut body = format!("Filler about item {i}.");
        for &k in &sentinels {
            body.push_str(&format!(" {}.", sentinel(k)));
        }
        body.push_str(" More filler.");
        carried.push(sentinels);
        let action = ResearchAction::new(id, params);
        let unit = InformationUnit::new(uid, kind, format!("unit {i}"), body, id, None);
        state.append_action(action, Some(unit)).unwrap();
    }
    state
}

/// Node of the brute-force evidence tree: `(parent index, supporting unit,
/// evidence start, depth, raw)`.
pub type OracleNode = (Option<usize>, UnitId, usize, u32, bool);

/// Enumerates every ancestor path from `root` whose units contain `claim`,
/// depth first, inputs in ascending id order.
pub fn oracle_tree(state: &RunState, root: UnitId, claim: &str) -> Vec<OracleNode> {
    fn walk(state: &RunState, unit: UnitId, parent: Option<usize>, claim: &str, depth: u32, out: &mut Vec<OracleNode>) {
        let producer = &state.actions[state.units[unit.0 as usize].producer.0 as usize];
        let mut inputs: Vec<UnitId> = match &producer.params {
            ActionParams::CreateNote { inputs, .. } => inputs.clone(),
            ActionParams::UserMessage { refs, .. } => refs.iter().map(|r| r.unit).collect(),
            _ => Vec::new(),
        };
        inputs.sort_unstable();
        inputs.dedup();
        for input in inputs {
            let body = &state.units[input.0 as usize].body;
            let Some(start) = body.find(claim) else { continue };
            let raw = state.units[input.0 as usize].kind != InfoKind::Processed;
            let index = out.len();
            out.push((parent, input, start, depth + 1, raw));
            if !raw {
                walk(state, input, Some(index), claim, depth + 1, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(state, root, None, claim, 0, &mut out);
    out
}
