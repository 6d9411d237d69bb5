//! Kernel-mode benchmark runner: boots a kernel with the chosen strategy,
//! drives the workload through concurrent agent sessions, and reduces the
//! schedule trace to metrics.

use std::collections::BTreeMap;

use agentsys::config::KernelConfig;
use agentsys::sched::CallRecord;
use agentsys::sdk::AgentSession;
use agentsys::time::ModelTime;
use agentsys::tool::{MockBehavior, ToolSchema};
use serde::Serialize;

use crate::metrics::{Metrics, QueryRecord};
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fifo,
    Rr,
    Baseline,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode, String> {
        match s {
            "fifo" => Ok(Mode::Fifo),
            "rr" => Ok(Mode::Rr),
            "baseline" | "none" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}` (fifo, rr, baseline)")),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fifo => "fifo",
            Mode::Rr => "rr",
            Mode::Baseline => "baseline",
        }
    }
}

/// The response text each (agent, call) produced, for cross-mode equality.
pub type ResponseTexts = BTreeMap<(usize, usize), Option<String>>;

pub struct RunOutcome {
    pub mode: Mode,
    pub metrics: Metrics,
    pub queries: Vec<QueryRecord>,
    pub calls: Vec<CallRecord>,
    pub responses: ResponseTexts,
    pub trace: Option<agentsys::sched::ScheduleTrace>,
}

/// The tool schema tool_use plans call (the echo mock by default).
pub fn workload_tool_schema(cfg: &KernelConfig) -> Result<ToolSchema, String> {
    let regs = cfg.tool_registrations().map_err(|e| e.to_string())?;
    regs.iter()
        .find(|r| matches!(r.behavior, MockBehavior::Echo))
        .or_else(|| regs.first())
        .map(|r| r.schema.clone())
        .ok_or_else(|| "no tools registered for tool_use workloads".to_string())
}

/// Point the kernel's storage at a fresh scratch directory. Benchmark runs
/// must not observe files from earlier runs.
pub fn scratch_storage(cfg: &mut KernelConfig) -> tempfile::TempDir {
    let dir = tempfile::tempdir().expect("create scratch storage");
    cfg.storage.root = dir.path().join("store").display().to_string();
    dir
}

pub fn run_kernel_mode(
    spec: &WorkloadSpec,
    mut cfg: KernelConfig,
    mode: Mode,
) -> Result<RunOutcome, String> {
    spec.validate()?;
    cfg.scheduler.strategy = match mode {
        Mode::Fifo => "fifo".into(),
        Mode::Rr => "rr".into(),
        Mode::Baseline => return Err("baseline mode has no kernel; use run_baseline_mode".into()),
    };
    let _scratch = scratch_storage(&mut cfg);
    let echo = workload_tool_schema(&cfg)?;
    let handle = agentsys::bootstrap_kernel(cfg).map_err(|e| e.to_string())?;

    let plans = spec.plan();
    let mut sessions: Vec<AgentSession> = Vec::with_capacity(spec.num_agents);
    for i in 0..spec.num_agents {
        let aid = handle.register_agent(&format!("agent{i}"));
        sessions.push(
            handle
                .session_at(aid, ModelTime::ZERO)
                .map_err(|e| e.to_string())?,
        );
    }
    handle.start().map_err(|e| e.to_string())?;

    // Initial wave: the first call of every agent, dispatched in agent order
    // from this thread so arrival order (and call ids) are reproducible.
    for (session, plan) in sessions.iter_mut().zip(&plans) {
        if let Some(first) = plan.first() {
            session
                .begin_with(first.query(&echo), first.overrides())
                .map_err(|e| e.to_string())?;
        }
    }

    let mut joins = Vec::with_capacity(sessions.len());
    for (agent_idx, (mut session, plan)) in sessions.into_iter().zip(plans).enumerate() {
        let echo = echo.clone();
        joins.push(std::thread::spawn(move || {
            let mut queries: Vec<QueryRecord> = Vec::with_capacity(plan.len());
            let mut texts: Vec<((usize, usize), Option<String>)> = Vec::new();
            for (call_idx, call) in plan.iter().enumerate() {
                let submitted = session.now();
                let response = if call_idx == 0 {
                    session.finish()
                } else {
                    session.submit_with(call.query(&echo), call.overrides())
                };
                queries.push(QueryRecord {
                    agent_id: session.aid(),
                    call_idx,
                    submitted,
                    finished: session.now(),
                    ok: !response.is_failed(),
                });
                texts.push(((agent_idx, call_idx), response.response_message));
            }
            (queries, texts)
        }));
    }

    let mut queries = Vec::new();
    let mut responses: ResponseTexts = BTreeMap::new();
    for join in joins {
        let (qs, texts) = join
            .join()
            .map_err(|_| "agent thread panicked".to_string())?;
        queries.extend(qs);
        responses.extend(texts);
    }
    handle.stop().map_err(|e| e.to_string())?;

    let mut trace = handle.take_trace();
    sort_trace(&mut trace);
    queries.sort_by_key(|q| (q.agent_id, q.call_idx));

    // Timestamp monotonicity holds on every completed call in every run.
    for c in &trace.completions {
        let start = c.start.unwrap_or(c.created);
        assert!(
            c.created <= start && start <= c.end,
            "timestamps out of order for call {}: {:?} {:?} {:?}",
            c.call_id,
            c.created,
            c.start,
            c.end
        );
    }
    let overall = trace
        .completions
        .iter()
        .map(|c| c.end)
        .max()
        .unwrap_or(ModelTime::ZERO);
    let metrics = Metrics::compute(overall, trace.completions.len() as u64, &queries);
    Ok(RunOutcome {
        mode,
        metrics,
        queries,
        calls: trace.completions.clone(),
        responses,
        trace: Some(trace),
    })
}

/// Canonical ordering so emitted reports are byte-stable: physical commit
/// order of entries from different loops is not deterministic, but the
/// model-time content is.
fn sort_trace(trace: &mut agentsys::sched::ScheduleTrace) {
    trace.completions.sort_by_key(|c| c.call_id);
    trace.segments.sort_by_key(|a| (a.start, a.call_id, a.end));
    trace
        .events
        .sort_by_key(|e| (e.at, e.call_id, event_rank(e.point)));
}

fn event_rank(p: agentsys::sched::TracePoint) -> u8 {
    match p {
        agentsys::sched::TracePoint::Start => 0,
        agentsys::sched::TracePoint::Resume => 1,
        agentsys::sched::TracePoint::Preempt => 2,
        agentsys::sched::TracePoint::Finish => 3,
    }
}
