//! Trial-and-error baseline: agents call the core directly with no scheduler.
//!
//! When every core slot is busy at the moment of a request, the attempt fails
//! like an out-of-memory rejection: the agent burns the configured fraction of
//! its prefill work plus a retry backoff, then tries again. Waiting through
//! retries counts toward query latency; only completed operations count as
//! executed syscalls.
//!
//! The run is a single-threaded discrete-event simulation over the same
//! deterministic core and workload plans as kernel mode, so response content
//! matches the scheduled runs exactly; only timing differs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use agentsys::config::KernelConfig;
use agentsys::context::SnapshotMode;
use agentsys::llm::{GenOverrides, LlmModule, SegmentOutcome, SimulatedCore, ToolCall};
use agentsys::sched::CallRecord;
use agentsys::sdk::{followup_query, format_tool_output, FileOp, Query};
use agentsys::storage::{StorageManager, StorageOp};
use agentsys::syscall::SysCallKind;
use agentsys::time::ModelTime;
use agentsys::tool::{ToolInvocation, ToolManager};

use crate::metrics::{Metrics, QueryRecord};
use crate::runner::{Mode, ResponseTexts, RunOutcome};
use crate::workload::{CallPlan, PlannedAction, WorkloadSpec};

enum Stage {
    NextCall,
    Primary {
        query: Query,
        overrides: GenOverrides,
    },
    Followup {
        query: Query,
        tool_calls: Vec<ToolCall>,
    },
}

struct Agent {
    idx: usize,
    aid: u64,
    plan: Vec<CallPlan>,
    pos: usize,
    stage: Stage,
    /// Consecutive capacity failures in the current generation stage.
    attempts: u64,
    /// Submission time of the query currently in flight.
    submitted: ModelTime,
    /// Creation time of the generation stage currently in flight.
    stage_created: ModelTime,
}

struct Recorder {
    next_id: u64,
    calls: Vec<CallRecord>,
    queries: Vec<QueryRecord>,
    responses: ResponseTexts,
}

impl Recorder {
    fn record_call(
        &mut self,
        aid: u64,
        kind: SysCallKind,
        created: ModelTime,
        start: ModelTime,
        end: ModelTime,
        failed: bool,
    ) {
        self.next_id += 1;
        self.calls.push(CallRecord {
            call_id: self.next_id,
            agent_id: aid,
            queue: kind,
            created,
            start: Some(start),
            end,
            failed,
        });
    }
}

pub fn run_baseline_mode(spec: &WorkloadSpec, mut cfg: KernelConfig) -> Result<RunOutcome, String> {
    spec.validate()?;
    let _scratch = crate::runner::scratch_storage(&mut cfg);
    cfg.validate().map_err(|e| e.to_string())?;

    let core = Arc::new(SimulatedCore::new(cfg.core_config()).map_err(|e| e.to_string())?);
    let llm = LlmModule::new(Arc::clone(&core));
    let tools = ToolManager::new();
    for reg in cfg.tool_registrations().map_err(|e| e.to_string())? {
        tools.register_tool(reg).map_err(|e| e.to_string())?;
    }
    let storage = StorageManager::open(&cfg.storage.root).map_err(|e| e.to_string())?;
    let echo = crate::runner::workload_tool_schema(&cfg)?;

    let backoff_policy = cfg.baseline_backoff_policy().map_err(|e| e.to_string())?;
    let backoff_base = cfg.baseline.retry_backoff.0;
    let retry_limit = cfg.baseline.retry_limit;
    let waste = cfg.core.failed_attempt_waste;
    let prefill_per_token = cfg.core_config().prefill_cost_per_token;

    let mut agents: Vec<Agent> = spec
        .plan()
        .into_iter()
        .enumerate()
        .map(|(idx, plan)| Agent {
            idx,
            aid: idx as u64 + 1,
            plan,
            pos: 0,
            stage: Stage::NextCall,
            attempts: 0,
            submitted: ModelTime::ZERO,
            stage_created: ModelTime::ZERO,
        })
        .collect();

    let mut rec = Recorder {
        next_id: 0,
        calls: Vec::new(),
        queries: Vec::new(),
        responses: ResponseTexts::new(),
    };

    let mut doomed_busy_until = ModelTime::ZERO;
    // (time, agent index): at most one outstanding event per agent, so the
    // pair is unique and pops are fully ordered.
    let mut events: BinaryHeap<Reverse<(ModelTime, usize)>> = BinaryHeap::new();
    for idx in 0..agents.len() {
        events.push(Reverse((ModelTime::ZERO, idx)));
    }

    while let Some(Reverse((now, idx))) = events.pop() {
        let agent = &mut agents[idx];
        match std::mem::replace(&mut agent.stage, Stage::NextCall) {
            Stage::NextCall => {
                let Some(plan) = agent.plan.get(agent.pos).cloned() else {
                    continue; // agent drained
                };
                agent.submitted = now;
                match plan.action {
                    PlannedAction::FileWrite | PlannedAction::FileRead => {
                        run_file_op(&storage, agent, &plan, &echo, now, &mut rec);
                        agent.pos += 1;
                        events.push(Reverse((now, idx)));
                    }
                    PlannedAction::Chat | PlannedAction::ToolUse => {
                        agent.stage = Stage::Primary {
                            query: plan.query(&echo),
                            overrides: plan.overrides(),
                        };
                        agent.attempts = 0;
                        agent.stage_created = now;
                        events.push(Reverse((now, idx)));
                    }
                }
            }
            Stage::Primary { query, overrides } => {
                attempt_generation(
                    AttemptCtx {
                        core: &core,
                        doomed_busy_until: &mut doomed_busy_until,
                        llm: &llm,
                        tools: &tools,
                        rec: &mut rec,
                        events: &mut events,
                        backoff_policy,
                        backoff_base,
                        retry_limit,
                        waste,
                        prefill_per_token,
                        followup_enabled: cfg.sdk.tool_followup,
                    },
                    agent,
                    now,
                    query,
                    overrides,
                    None,
                );
            }
            Stage::Followup { query, tool_calls } => {
                attempt_generation(
                    AttemptCtx {
                        core: &core,
                        doomed_busy_until: &mut doomed_busy_until,
                        llm: &llm,
                        tools: &tools,
                        rec: &mut rec,
                        events: &mut events,
                        backoff_policy,
                        backoff_base,
                        retry_limit,
                        waste,
                        prefill_per_token,
                        followup_enabled: cfg.sdk.tool_followup,
                    },
                    agent,
                    now,
                    query,
                    GenOverrides::default(),
                    Some(tool_calls),
                );
            }
        }
    }

    rec.calls.sort_by_key(|c| c.call_id);
    for c in &rec.calls {
        let start = c.start.unwrap_or(c.created);
        assert!(
            c.created <= start && start <= c.end,
            "timestamps out of order"
        );
    }
    rec.queries.sort_by_key(|q| (q.agent_id, q.call_idx));
    let overall = rec
        .calls
        .iter()
        .map(|c| c.end)
        .max()
        .unwrap_or(ModelTime::ZERO);
    let metrics = Metrics::compute(overall, rec.calls.len() as u64, &rec.queries);
    Ok(RunOutcome {
        mode: Mode::Baseline,
        metrics,
        queries: rec.queries,
        calls: rec.calls,
        responses: rec.responses,
        trace: None,
    })
}

struct AttemptCtx<'a> {
    core: &'a Arc<SimulatedCore>,
    /// Device copy-path occupancy by the current doomed load, if any.
    doomed_busy_until: &'a mut ModelTime,
    llm: &'a LlmModule<SimulatedCore>,
    tools: &'a ToolManager,
    rec: &'a mut Recorder,
    events: &'a mut BinaryHeap<Reverse<(ModelTime, usize)>>,
    backoff_policy: agentsys::config::BackoffPolicy,
    backoff_base: ModelTime,
    retry_limit: u64,
    waste: f64,
    prefill_per_token: ModelTime,
    followup_enabled: bool,
}

/// One direct llm_generate attempt at `now`. On a capacity rejection the
/// agent pays the wasted prefill plus backoff and retries; on success the
/// stage's follow-on work (tools, follow-up generation, next call) is laid out.
fn attempt_generation(
    mut ctx: AttemptCtx<'_>,
    agent: &mut Agent,
    now: ModelTime,
    query: Query,
    overrides: GenOverrides,
    followup_of: Option<Vec<ToolCall>>,
) {
    let prompt = match ctx.llm.effective_prompt(&query) {
        Ok(p) => p,
        Err(_) => {
            finish_query(&mut ctx, agent, now, now, None, false);
            return;
        }
    };
    let gen_plan = ctx.core.plan(&prompt, &overrides);
    let service = gen_plan.total_cost();

    if ctx.core.slot_bank().claim(now, now + service).is_err() {
        agent.attempts += 1;
        if ctx.retry_limit > 0 && agent.attempts > ctx.retry_limit {
            finish_query(&mut ctx, agent, now, now, None, false);
            return;
        }
        let wasted = ModelTime::from_micros(
            (ctx.prefill_per_token
                .per_tokens(gen_plan.prompt_tokens)
                .as_micros() as f64
                * ctx.waste)
                .round() as i64,
        );
        // The rejected attempt's tensor load consumed device time before
        // being thrown away. Loads serialize on the device's copy path, so at
        // most one doomed load occupies it at a time; attempts arriving while
        // one is in flight bounce off the allocator without core cost.
        if now >= *ctx.doomed_busy_until && !wasted.is_zero() {
            ctx.core.slot_bank().charge_earliest(wasted);
            *ctx.doomed_busy_until = now + wasted;
        }
        let backoff = ctx.backoff_policy.delay(ctx.backoff_base, agent.attempts);
        let mut retry_at = now + wasted + backoff;
        if retry_at == now {
            // Zero waste and zero backoff degenerate to waiting for the core.
            retry_at = ctx.core.slot_bank().earliest_free();
        }
        // Stage is preserved for the retry.
        agent.stage = match followup_of {
            None => Stage::Primary { query, overrides },
            Some(calls) => Stage::Followup {
                query,
                tool_calls: calls,
            },
        };
        ctx.events.push(Reverse((retry_at, agent.idx)));
        return;
    }

    // Slot claimed for [now, end): run the full deterministic generation.
    let end = now + service;
    agent.attempts = 0;
    let run = ctx
        .core
        .llm_generate(&prompt, &overrides, None, None, SnapshotMode::Text, 0)
        .expect("unbudgeted simulated generation succeeds");
    let mut gen = match run.outcome {
        SegmentOutcome::Finished(g) => g,
        SegmentOutcome::Suspended(_) => unreachable!("no budget given"),
    };
    ctx.rec.record_call(
        agent.aid,
        SysCallKind::Llm,
        agent.stage_created,
        now,
        end,
        false,
    );

    if let Some(tool_calls) = followup_of {
        // Follow-up generation completes the tool_use query.
        let _ = tool_calls;
        finish_query(&mut ctx, agent, agent.submitted, end, Some(gen.text), true);
        return;
    }

    match query.action_type {
        agentsys::ActionType::Chat => {
            finish_query(&mut ctx, agent, agent.submitted, end, Some(gen.text), true);
        }
        agentsys::ActionType::ToolUse => {
            if let Some(json) = agentsys::llm::TextGenerator::synthesize_tool_call_json(
                ctx.core.as_ref(),
                &prompt,
                &overrides,
                &query.tools,
            ) {
                gen.text.push(' ');
                gen.text.push_str(&json);
            }
            let calls = match agentsys::llm::parse_tool_calls(&gen.text) {
                Ok(c) => c,
                Err(_) => {
                    finish_query(&mut ctx, agent, agent.submitted, end, None, false);
                    return;
                }
            };
            if calls.is_empty() {
                finish_query(&mut ctx, agent, agent.submitted, end, Some(gen.text), true);
                return;
            }
            // Tools execute directly on the agent's timeline, serially.
            let mut cursor = end;
            let mut outputs = Vec::with_capacity(calls.len());
            let mut failed = false;
            for call in &calls {
                let inv = ToolInvocation::from(call.clone());
                let cost = ctx.tools.invocation_cost(&inv).unwrap_or(ModelTime::ZERO);
                let t_end = cursor + cost;
                let result = ctx.tools.tool_run(&inv, cursor, t_end);
                ctx.rec.record_call(
                    agent.aid,
                    SysCallKind::Tool,
                    end,
                    cursor,
                    t_end,
                    result.is_err(),
                );
                match result {
                    Ok(text) => outputs.push(format_tool_output(&call.name, &text)),
                    Err(_) => failed = true,
                }
                cursor = t_end;
            }
            if failed {
                finish_query(&mut ctx, agent, agent.submitted, cursor, None, false);
                return;
            }
            if ctx.followup_enabled {
                agent.stage = Stage::Followup {
                    query: followup_query(&query, &gen.text, &outputs),
                    tool_calls: calls,
                };
                agent.attempts = 0;
                agent.stage_created = cursor;
                ctx.events.push(Reverse((cursor, agent.idx)));
            } else {
                finish_query(
                    &mut ctx,
                    agent,
                    agent.submitted,
                    cursor,
                    Some(outputs.join("\n")),
                    true,
                );
            }
        }
        agentsys::ActionType::FileOperation => unreachable!("file ops bypass generation"),
    }
}

fn finish_query(
    ctx: &mut AttemptCtx<'_>,
    agent: &mut Agent,
    submitted: ModelTime,
    finished: ModelTime,
    text: Option<String>,
    ok: bool,
) {
    ctx.rec.queries.push(QueryRecord {
        agent_id: agent.aid,
        call_idx: agent.pos,
        submitted,
        finished,
        ok,
    });
    ctx.rec.responses.insert((agent.idx, agent.pos), text);
    agent.pos += 1;
    agent.stage = Stage::NextCall;
    ctx.events.push(Reverse((finished, agent.idx)));
}

/// File operations map to the same storage calls the facade would issue; they
/// are uncontended and instantaneous in model time.
fn run_file_op(
    storage: &StorageManager,
    agent: &mut Agent,
    plan: &CallPlan,
    echo: &agentsys::tool::ToolSchema,
    now: ModelTime,
    rec: &mut Recorder,
) {
    let query = plan.query(echo);
    let content = &query.messages.last().unwrap().content;
    let op: FileOp = serde_json::from_str(content).expect("plan-built file op parses");
    let aname = |name: &str| format!("a{}_{name}", agent.aid);
    let storage_op = match &op {
        FileOp::Write { name, text, .. } => StorageOp::Write {
            aname: aname(name),
            payload: text.clone(),
            ids: None,
        },
        FileOp::Read { name, .. } => StorageOp::Read {
            aname: aname(name),
            ids: None,
        },
        FileOp::Retrieve { name, query, k, .. } => StorageOp::Retrieve {
            aname: aname(name),
            query: query.clone(),
            k: *k,
            ids: None,
        },
        FileOp::Clear { name, .. } => StorageOp::Clear {
            aname: aname(name),
            ids: None,
        },
    };
    let result = storage.execute(&storage_op);
    let (ok, text) = match result {
        Ok(payload) => (true, Some(payload.unwrap_or_else(|| "ok".into()))),
        Err(_) => (false, None),
    };
    rec.record_call(agent.aid, SysCallKind::Storage, now, now, now, !ok);
    rec.queries.push(QueryRecord {
        agent_id: agent.aid,
        call_idx: agent.pos,
        submitted: now,
        finished: now,
        ok,
    });
    rec.responses.insert((agent.idx, agent.pos), text);
}
