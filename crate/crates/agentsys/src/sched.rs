//! Centralized scheduler: one queue per resource module, four processor
//! loops, FIFO and preemptive round-robin for the LLM queue.
//!
//! All queues and metrics run on the model-time axis. Queues are ordered by
//! `(arrival, agent, call id)` and a processor may only pop its earliest entry
//! once no live dispatch source could still produce an earlier-sorting
//! arrival. Sources (submitting sessions, the workload's initial wave) hold a
//! *bound guard* declaring the earliest key they may still dispatch at; the
//! guard advances as completions come back. This conservative gate makes the
//! virtual-time schedule a pure function of the workload, independent of OS
//! thread interleaving, while the kernel itself stays genuinely concurrent.
//!
//! Physical pop timing never affects the trace: a segment's start is
//! `max(arrival, resource free time)`, both model-time quantities.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use crate::context::{ContextManager, SnapshotMode};
use crate::error::{KernelError, Result};
use crate::llm::{LlmModule, SegmentOutcome, SimulatedCore};
use crate::memory::MemoryManager;
use crate::sdk::Response;
use crate::storage::StorageManager;
use crate::syscall::{AgentId, CallId, LifecycleState, SysCall, SysCallKind, SysCallRequest};
use crate::time::ModelTime;
use crate::tool::ToolManager;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fifo,
    Rr,
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub strategy: Strategy,
    /// Round-robin turn budget, in decode tokens.
    pub time_slice: u64,
    pub max_concurrent_agents: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            strategy: Strategy::Fifo,
            time_slice: 16,
            max_concurrent_agents: 250,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_slice < 1 {
            return Err(KernelError::Config {
                key: "scheduler.time_slice".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.max_concurrent_agents < 1 {
            return Err(KernelError::Config {
                key: "scheduler.max_concurrent_agents".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracePoint {
    Start,
    Preempt,
    Resume,
    Finish,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceEvent {
    pub call_id: CallId,
    pub agent_id: AgentId,
    pub queue: SysCallKind,
    pub point: TracePoint,
    pub at: ModelTime,
}

/// One contiguous span of resource occupancy by one call.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Segment {
    pub call_id: CallId,
    pub agent_id: AgentId,
    pub queue: SysCallKind,
    pub resource: String,
    pub start: ModelTime,
    pub end: ModelTime,
}

/// Timeline of one completed syscall.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CallRecord {
    pub call_id: CallId,
    pub agent_id: AgentId,
    pub queue: SysCallKind,
    pub created: ModelTime,
    pub start: Option<ModelTime>,
    pub end: ModelTime,
    pub failed: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ScheduleTrace {
    pub events: Vec<TraceEvent>,
    pub segments: Vec<Segment>,
    pub completions: Vec<CallRecord>,
}

impl ScheduleTrace {
    /// Finish events in order, as (call_id, at).
    pub fn finish_order(&self) -> Vec<(CallId, ModelTime)> {
        let mut v: Vec<(CallId, ModelTime)> = self
            .events
            .iter()
            .filter(|e| e.point == TracePoint::Finish)
            .map(|e| (e.call_id, e.at))
            .collect();
        v.sort_by_key(|&(id, at)| (at, id));
        v
    }
}

type QueueKey = (ModelTime, AgentId, CallId);
type BoundKey = (ModelTime, AgentId, u64);

const QUEUE_KINDS: [SysCallKind; 4] = [
    SysCallKind::Llm,
    SysCallKind::Memory,
    SysCallKind::Storage,
    SysCallKind::Tool,
];

fn queue_index(kind: SysCallKind) -> usize {
    match kind {
        SysCallKind::Llm => 0,
        SysCallKind::Memory => 1,
        SysCallKind::Storage => 2,
        SysCallKind::Tool => 3,
        SysCallKind::Access => unreachable!("access calls are never queued"),
    }
}

struct EngineState {
    queues: [BTreeMap<QueueKey, Arc<SysCall>>; 4],
    bounds: BTreeSet<BoundKey>,
    /// Bound handed to the waiter of each completed call, keyed by call id.
    /// Created atomically with the completion so the waiter's follow-up
    /// dispatches stay covered; the waiter adopts (and later releases) it.
    completion_bounds: HashMap<CallId, BoundKey>,
    next_bound_token: u64,
    mem_clock: ModelTime,
    sto_clock: ModelTime,
    tool_free: HashMap<String, Vec<ModelTime>>,
    running: bool,
    stopping: bool,
    high_water: ModelTime,
    trace: ScheduleTrace,
}

impl EngineState {
    /// The earliest (time, agent) rank a live source may still dispatch at.
    fn min_bound(&self) -> (ModelTime, AgentId) {
        self.bounds
            .iter()
            .next()
            .map(|&(t, a, _)| (t, a))
            .unwrap_or((ModelTime::MAX, AgentId::MAX))
    }

    /// A queue head is safe to pop when no future arrival can sort before it.
    /// Arrivals dispatched later under the same (time, agent) rank always get
    /// larger call ids, so rank equality is safe.
    fn gate_open(&self, key: &QueueKey) -> bool {
        (key.0, key.1) <= self.min_bound()
    }

    fn note_end(&mut self, end: ModelTime) {
        if end > self.high_water {
            self.high_water = end;
        }
    }
}

/// A live dispatch source. While held, the scheduler will not run any queued
/// call that sorts after `(time, rank)`, because this source may still
/// dispatch at that key. Advance it as completions come back; it releases on
/// drop.
pub struct BoundGuard {
    engine: Arc<Engine>,
    key: Option<BoundKey>,
}

impl BoundGuard {
    pub fn time(&self) -> ModelTime {
        self.key.expect("guard live").0
    }

    pub fn rank(&self) -> AgentId {
        self.key.expect("guard live").1
    }

    /// Atomically move this source forward in time. Never moves backward.
    pub fn advance_to(&mut self, t: ModelTime) {
        let key = self.key.expect("guard live");
        assert!(t >= key.0, "bound guards only advance forward");
        if t == key.0 {
            return;
        }
        let new_key = (t, key.1, key.2);
        {
            let mut st = self.engine.state.lock().unwrap();
            st.bounds.remove(&key);
            st.bounds.insert(new_key);
        }
        self.engine.cv.notify_all();
        self.key = Some(new_key);
    }

    pub fn release(mut self) {
        self.release_inner();
    }

    fn release_inner(&mut self) {
        if let Some(key) = self.key.take() {
            let mut st = self.engine.state.lock().unwrap();
            st.bounds.remove(&key);
            drop(st);
            self.engine.cv.notify_all();
        }
    }
}

impl Drop for BoundGuard {
    fn drop(&mut self) {
        self.release_inner();
    }
}

/// The scheduler engine: queues, gates, processor loops, trace.
pub struct Engine {
    state: Mutex<EngineState>,
    cv: Condvar,
    cfg: SchedulerConfig,
    snapshot_mode: SnapshotMode,
    core: Arc<SimulatedCore>,
    llm: LlmModule<SimulatedCore>,
    ctx: Arc<ContextManager>,
    mem: Arc<MemoryManager>,
    sto: Arc<StorageManager>,
    tools: Arc<ToolManager>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: SchedulerConfig,
        snapshot_mode: SnapshotMode,
        core: Arc<SimulatedCore>,
        ctx: Arc<ContextManager>,
        mem: Arc<MemoryManager>,
        sto: Arc<StorageManager>,
        tools: Arc<ToolManager>,
    ) -> Result<Arc<Self>> {
        cfg.validate()?;
        Ok(Arc::new(Engine {
            state: Mutex::new(EngineState {
                queues: Default::default(),
                bounds: BTreeSet::new(),
                completion_bounds: HashMap::new(),
                next_bound_token: 0,
                mem_clock: ModelTime::ZERO,
                sto_clock: ModelTime::ZERO,
                tool_free: HashMap::new(),
                running: false,
                stopping: false,
                high_water: ModelTime::ZERO,
                trace: ScheduleTrace::default(),
            }),
            cv: Condvar::new(),
            llm: LlmModule::new(Arc::clone(&core)),
            cfg,
            snapshot_mode,
            core,
            ctx,
            mem,
            sto,
            tools,
            threads: Mutex::new(Vec::new()),
        }))
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    /// Declare a dispatch source at `(t, rank)`.
    pub fn open_bound(self: &Arc<Self>, t: ModelTime, rank: AgentId) -> BoundGuard {
        let key = {
            let mut st = self.state.lock().unwrap();
            st.next_bound_token += 1;
            let key = (t, rank, st.next_bound_token);
            st.bounds.insert(key);
            key
        };
        BoundGuard {
            engine: Arc::clone(self),
            key: Some(key),
        }
    }

    /// Max committed end time: a safe arrival point for ad-hoc submissions.
    pub fn high_water(&self) -> ModelTime {
        self.state.lock().unwrap().high_water
    }

    /// Take ownership of the bound created when `call_id` completed. Exactly
    /// one waiter per completion should adopt; the guard covers follow-up
    /// dispatches at or after the completion time.
    pub fn adopt_completion(self: &Arc<Self>, call_id: CallId) -> Option<BoundGuard> {
        let key = self
            .state
            .lock()
            .unwrap()
            .completion_bounds
            .remove(&call_id)?;
        Some(BoundGuard {
            engine: Arc::clone(self),
            key: Some(key),
        })
    }

    pub fn is_running(&self) -> bool {
        self.state.lock().unwrap().running
    }

    pub fn queue_depths(&self) -> [usize; 4] {
        let st = self.state.lock().unwrap();
        [0, 1, 2, 3].map(|i| st.queues[i].len())
    }

    /// Route a created syscall onto the queue matching its kind. The arrival
    /// time is the guard's current time; the guard must rank at or before the
    /// call's agent so the conservative gate stays sound.
    pub fn dispatch(&self, guard: &BoundGuard, call: Arc<SysCall>) -> Result<()> {
        if call.kind() == SysCallKind::Access {
            return Err(KernelError::BadQuery(
                "access calls bypass the scheduler".into(),
            ));
        }
        assert!(
            guard.rank() <= call.get_id(),
            "dispatch source must rank at or before the call's agent"
        );
        let arrival = guard.time();
        let mut st = self.state.lock().unwrap();
        if !st.running || st.stopping {
            return Err(KernelError::NotRunning);
        }
        call.set_status(LifecycleState::Queued)?;
        st.queues[queue_index(call.kind())].insert((arrival, call.get_id(), call.call_id()), call);
        drop(st);
        self.cv.notify_all();
        Ok(())
    }

    /// Spawn the four processor loops.
    pub fn start(self: &Arc<Self>) -> Result<()> {
        {
            let mut st = self.state.lock().unwrap();
            if st.running {
                return Err(KernelError::AlreadyRunning);
            }
            st.running = true;
            st.stopping = false;
        }
        let mut threads = self.threads.lock().unwrap();
        for kind in QUEUE_KINDS {
            let engine = Arc::clone(self);
            threads.push(std::thread::spawn(move || engine.run_loop(kind)));
        }
        Ok(())
    }

    /// Drain the queues, then stop and join all processor loops.
    pub fn stop(&self) -> Result<()> {
        {
            let mut st = self.state.lock().unwrap();
            if !st.running {
                return Err(KernelError::NotRunning);
            }
            st.stopping = true;
        }
        self.cv.notify_all();
        let handles: Vec<JoinHandle<()>> = self.threads.lock().unwrap().drain(..).collect();
        for h in handles {
            h.join().expect("processor loop panicked");
        }
        let mut st = self.state.lock().unwrap();
        st.running = false;
        st.stopping = false;
        Ok(())
    }

    pub fn take_trace(&self) -> ScheduleTrace {
        std::mem::take(&mut self.state.lock().unwrap().trace)
    }

    pub fn trace_snapshot(&self) -> ScheduleTrace {
        self.state.lock().unwrap().trace.clone()
    }

    /// One processor loop: wait for a gated-poppable entry, execute it with
    /// the engine lock held (bodies are model-time instantaneous), repeat.
    /// Exits once stopping and the queue is drained.
    fn run_loop(self: Arc<Self>, kind: SysCallKind) {
        let qi = queue_index(kind);
        let mut st = self.state.lock().unwrap();
        loop {
            let key = loop {
                match self.poppable(&st, kind) {
                    Some(key) => break Some(key),
                    None => {
                        if st.stopping && st.queues[qi].is_empty() {
                            break None;
                        }
                        st = self.cv.wait(st).unwrap();
                    }
                }
            };
            let Some(key) = key else { return };
            let call = st.queues[qi].remove(&key).expect("poppable key present");
            match kind {
                SysCallKind::Llm => self.execute_llm(&mut st, call, key.0),
                SysCallKind::Memory | SysCallKind::Storage => {
                    self.execute_manager(&mut st, call, key.0)
                }
                SysCallKind::Tool => self.execute_tool(&mut st, call, key.0),
                SysCallKind::Access => unreachable!(),
            }
            self.cv.notify_all();
        }
    }

    fn poppable(&self, st: &EngineState, kind: SysCallKind) -> Option<QueueKey> {
        match kind {
            SysCallKind::Tool => self.poppable_tool(st),
            _ => {
                let key = *st.queues[queue_index(kind)].keys().next()?;
                st.gate_open(&key).then_some(key)
            }
        }
    }

    /// Conflict skip-scan over the tool queue: consider only the earliest
    /// queued call per tool (skipped calls keep their positions), and among
    /// those pick the one that can start first. Within a tool this is FIFO;
    /// across tools order cannot affect the schedule.
    fn poppable_tool(&self, st: &EngineState) -> Option<QueueKey> {
        let mut seen: HashSet<String> = HashSet::new();
        let mut best: Option<(ModelTime, QueueKey)> = None;
        for (key, call) in st.queues[queue_index(SysCallKind::Tool)].iter() {
            let SysCallRequest::Tool(inv) = call.request() else {
                continue;
            };
            if !seen.insert(inv.name.clone()) {
                continue;
            }
            if !st.gate_open(key) {
                continue;
            }
            let feasible = match st.tool_free.get(&inv.name) {
                Some(bank) => key.0.max(*bank.iter().min().expect("bank non-empty")),
                None => key.0,
            };
            if best.is_none_or(|(bf, bk)| (feasible, *key) < (bf, bk)) {
                best = Some((feasible, *key));
            }
        }
        best.map(|(_, key)| key)
    }

    /// Commit a completion: finish trace event, waiter bound, signal.
    fn complete_call(
        &self,
        st: &mut EngineState,
        call: &Arc<SysCall>,
        response: Response,
        at: ModelTime,
    ) {
        let state = if response.is_failed() {
            LifecycleState::Failed
        } else {
            LifecycleState::Done
        };
        st.trace.events.push(TraceEvent {
            call_id: call.call_id(),
            agent_id: call.get_id(),
            queue: call.kind(),
            point: TracePoint::Finish,
            at,
        });
        st.note_end(at);
        st.trace.completions.push(CallRecord {
            call_id: call.call_id(),
            agent_id: call.get_id(),
            queue: call.kind(),
            created: call.created_time(),
            start: call.start_time(),
            end: at,
            failed: response.is_failed(),
        });
        st.next_bound_token += 1;
        let key = (at, call.get_id(), st.next_bound_token);
        st.bounds.insert(key);
        st.completion_bounds.insert(call.call_id(), key);
        let _ = call.complete(response, at, state);
    }

    fn fail_call(
        &self,
        st: &mut EngineState,
        call: &Arc<SysCall>,
        at: ModelTime,
        stage: &str,
        err: &KernelError,
    ) {
        let _ = call.set_status(LifecycleState::Executing);
        self.complete_call(st, call, Response::failed(stage, err), at);
    }

    fn execute_llm(&self, st: &mut EngineState, call: Arc<SysCall>, arrival: ModelTime) {
        let (query, overrides) = match call.request() {
            SysCallRequest::Llm { query, overrides } => (query.clone(), overrides.clone()),
            _ => {
                let err = KernelError::BadQuery("llm queue received non-llm call".into());
                return self.fail_call(st, &call, arrival, "llm", &err);
            }
        };
        let (query, overrides) = (&query, &overrides);
        let cid = call.call_id();
        let aid = call.get_id();
        let prompt = match self.llm.effective_prompt(query) {
            Ok(p) => p,
            Err(e) => return self.fail_call(st, &call, arrival, "llm", &e),
        };
        let resume = self.ctx.gen_restore(cid);
        let resumed = resume.is_some();
        if call.set_status(LifecycleState::Executing).is_err() {
            return self.fail_call(
                st,
                &call,
                arrival,
                "llm",
                &KernelError::BadQuery("illegal lifecycle state on pop".into()),
            );
        }

        let start = arrival.max(self.core.slot_bank().earliest_free());
        call.mark_started(start);
        st.trace.events.push(TraceEvent {
            call_id: cid,
            agent_id: aid,
            queue: SysCallKind::Llm,
            point: if resumed {
                TracePoint::Resume
            } else {
                TracePoint::Start
            },
            at: start,
        });

        let budget = match self.cfg.strategy {
            Strategy::Fifo => None,
            Strategy::Rr => Some(self.cfg.time_slice),
        };
        let run = match self.core.llm_generate(
            &prompt,
            overrides,
            resume.as_ref(),
            budget,
            self.snapshot_mode,
            cid,
        ) {
            Ok(run) => run,
            Err(e) => {
                self.ctx.clear_restore(cid);
                return self.fail_call(st, &call, start, "llm", &e);
            }
        };

        let end = start + run.cost;
        let slot = self
            .core
            .slot_bank()
            .claim(start, end)
            .expect("kernel llm loop owns slot availability");
        st.trace.segments.push(Segment {
            call_id: cid,
            agent_id: aid,
            queue: SysCallKind::Llm,
            resource: format!("llm:{slot}"),
            start,
            end,
        });
        st.note_end(end);

        match run.outcome {
            SegmentOutcome::Suspended(snap) => {
                self.ctx.gen_snapshot(cid, snap);
                call.set_status(LifecycleState::Suspended)
                    .expect("executing -> suspended is legal for llm");
                st.trace.events.push(TraceEvent {
                    call_id: cid,
                    agent_id: aid,
                    queue: SysCallKind::Llm,
                    point: TracePoint::Preempt,
                    at: end,
                });
                st.queues[queue_index(SysCallKind::Llm)].insert((end, aid, cid), call);
            }
            SegmentOutcome::Finished(gen) => {
                let response = match self
                    .llm
                    .decorate_and_finalize(query, &prompt, overrides, gen)
                {
                    Ok(r) => r,
                    Err(e) => Response::failed("llm", &e),
                };
                self.ctx.clear_restore(cid);
                self.complete_call(st, &call, response, end);
            }
        }
    }

    /// Memory and storage operations are model-time instantaneous; the loop
    /// serializes them in arrival order.
    fn execute_manager(&self, st: &mut EngineState, call: Arc<SysCall>, arrival: ModelTime) {
        let cid = call.call_id();
        let aid = call.get_id();
        let kind = call.kind();
        let clock = match kind {
            SysCallKind::Memory => &mut st.mem_clock,
            _ => &mut st.sto_clock,
        };
        let start = arrival.max(*clock);
        *clock = start;
        if call.set_status(LifecycleState::Executing).is_err() {
            return self.fail_call(
                st,
                &call,
                start,
                kind.as_str(),
                &KernelError::BadQuery("illegal lifecycle state on pop".into()),
            );
        }
        call.mark_started(start);

        let result = match call.request() {
            SysCallRequest::Memory(op) => self.mem.execute(op),
            SysCallRequest::Storage(op) => self.sto.execute(op),
            _ => Err(KernelError::BadQuery("wrong queue for call".into())),
        };
        let response = match result {
            Ok(payload) => Response::text(payload.unwrap_or_else(|| "ok".into())),
            Err(e) => Response::failed(kind.as_str(), &e),
        };

        st.trace.events.push(TraceEvent {
            call_id: cid,
            agent_id: aid,
            queue: kind,
            point: TracePoint::Start,
            at: start,
        });
        st.trace.segments.push(Segment {
            call_id: cid,
            agent_id: aid,
            queue: kind,
            resource: kind.as_str().to_string(),
            start,
            end: start,
        });
        self.complete_call(st, &call, response, start);
    }

    fn execute_tool(&self, st: &mut EngineState, call: Arc<SysCall>, arrival: ModelTime) {
        let SysCallRequest::Tool(inv) = call.request() else {
            let err = KernelError::BadQuery("tool queue received non-tool call".into());
            return self.fail_call(st, &call, arrival, "tool", &err);
        };
        let cid = call.call_id();
        let aid = call.get_id();

        // Validation failures consume no tool slot and fail at arrival.
        let reg = match self.tools.lookup(&inv.name) {
            Ok(r) => r,
            Err(e) => return self.fail_call(st, &call, arrival, "tool", &e),
        };
        if let Err(e) = ToolManager::validate_params(&reg.schema, &inv.parameters) {
            return self.fail_call(st, &call, arrival, "tool", &e);
        }
        let cost = match self.tools.invocation_cost(inv) {
            Ok(c) => c,
            Err(e) => return self.fail_call(st, &call, arrival, "tool", &e),
        };

        let bank = st
            .tool_free
            .entry(inv.name.clone())
            .or_insert_with(|| vec![ModelTime::ZERO; reg.max_parallel]);
        let (slot, free) = bank
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(i, f)| (f, i))
            .expect("bank non-empty");
        let start = arrival.max(free);
        let end = start + cost;
        bank[slot] = end;

        if call.set_status(LifecycleState::Executing).is_err() {
            return self.fail_call(
                st,
                &call,
                start,
                "tool",
                &KernelError::BadQuery("illegal lifecycle state on pop".into()),
            );
        }
        call.mark_started(start);
        st.trace.events.push(TraceEvent {
            call_id: cid,
            agent_id: aid,
            queue: SysCallKind::Tool,
            point: TracePoint::Start,
            at: start,
        });
        st.trace.segments.push(Segment {
            call_id: cid,
            agent_id: aid,
            queue: SysCallKind::Tool,
            resource: format!("tool:{}:{slot}", inv.name),
            start,
            end,
        });
        st.note_end(end);

        let response = match self.tools.tool_run(inv, start, end) {
            Ok(text) => Response::text(text),
            Err(e) => Response::failed("tool", &e),
        };
        self.complete_call(st, &call, response, end);
    }
}
