//! SDK facade: the application layer's only entry point into the kernel.
//!
//! Agents submit [`Query`] values through an [`AgentSession`]; the facade
//! decomposes each query into syscalls by action type, dispatches them to the
//! scheduler, and assembles the final [`Response`]. Access-related operations
//! execute inline here and never enter the scheduler queues.
//!
//! Sessions carry the agent's position on the model-time axis: a query's
//! syscalls arrive at the completion time of whatever the agent saw last,
//! which keeps every run's schedule reproducible.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::access::{AccessManager, AuditRecord};
use crate::config::KernelConfig;
use crate::context::ContextManager;
use crate::error::{ErrorInfo, KernelError, Result};
use crate::llm::{CoreKind, GenOverrides, SimulatedCore, ToolCall};
use crate::memory::{MemoryManager, MemoryOp};
use crate::sched::{BoundGuard, Engine, ScheduleTrace};
use crate::storage::{StorageManager, StorageOp};
use crate::syscall::{AgentId, SysCall, SysCallRequest, SysCallTable};
use crate::time::ModelTime;
use crate::tool::ToolInvocation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: &str) -> Self {
        Message {
            role: role.to_string(),
            content: content.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Chat,
    ToolUse,
    FileOperation,
}

/// Accept both published spellings of the action types and normalize them.
pub fn normalize_action_type(s: &str) -> Result<ActionType> {
    match s {
        "chat" => Ok(ActionType::Chat),
        "tool_use" | "call_tool" => Ok(ActionType::ToolUse),
        "file_operation" | "operate_file" => Ok(ActionType::FileOperation),
        other => Err(KernelError::Validation {
            param: "action_type".into(),
            message: format!("unknown action type `{other}`"),
        }),
    }
}

/// The SDK request envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub tools: Vec<crate::tool::ToolSchema>,
    pub action_type: ActionType,
    #[serde(default = "default_return_type")]
    pub message_return_type: String,
}

fn default_return_type() -> String {
    "text".into()
}

impl Query {
    pub fn chat(messages: Vec<(&str, &str)>) -> Query {
        Query {
            messages: messages.iter().map(|(r, c)| Message::new(r, c)).collect(),
            tools: Vec::new(),
            action_type: ActionType::Chat,
            message_return_type: default_return_type(),
        }
    }

    pub fn tool_use(messages: Vec<(&str, &str)>, tools: Vec<crate::tool::ToolSchema>) -> Query {
        Query {
            messages: messages.iter().map(|(r, c)| Message::new(r, c)).collect(),
            tools,
            action_type: ActionType::ToolUse,
            message_return_type: default_return_type(),
        }
    }

    pub fn file_operation(op: &FileOp) -> Query {
        Query {
            messages: vec![Message::new(
                "user",
                &serde_json::to_string(op).expect("file op serializes"),
            )],
            tools: Vec::new(),
            action_type: ActionType::FileOperation,
            message_return_type: default_return_type(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(KernelError::BadQuery("messages must be non-empty".into()));
        }
        if self.action_type == ActionType::ToolUse && self.tools.is_empty() {
            return Err(KernelError::BadQuery(
                "tool_use queries must carry tool schemas".into(),
            ));
        }
        Ok(())
    }
}

/// File-operation command grammar, carried as JSON in the query's last
/// message. `owner` targets another agent's files and is access-gated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FileOp {
    Write {
        name: String,
        text: String,
        #[serde(default)]
        owner: Option<AgentId>,
    },
    Read {
        name: String,
        #[serde(default)]
        owner: Option<AgentId>,
    },
    Retrieve {
        name: String,
        query: String,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        owner: Option<AgentId>,
    },
    Clear {
        name: String,
        #[serde(default)]
        owner: Option<AgentId>,
    },
}

fn default_k() -> usize {
    3
}

impl FileOp {
    fn owner(&self) -> Option<AgentId> {
        match self {
            FileOp::Write { owner, .. }
            | FileOp::Read { owner, .. }
            | FileOp::Retrieve { owner, .. }
            | FileOp::Clear { owner, .. } => *owner,
        }
    }

    fn syscall_name(&self) -> &'static str {
        match self {
            FileOp::Write { .. } => "sto_write",
            FileOp::Read { .. } => "sto_read",
            FileOp::Retrieve { .. } => "sto_retrieve",
            FileOp::Clear { .. } => "sto_clear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Failed,
}

/// The SDK response envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub response_message: Option<String>,
    pub tool_calls: Option<Vec<ToolCall>>,
    pub status: ResponseStatus,
    pub error: Option<ErrorInfo>,
}

impl Response {
    pub fn text(message: impl Into<String>) -> Response {
        Response {
            response_message: Some(message.into()),
            tool_calls: None,
            status: ResponseStatus::Ok,
            error: None,
        }
    }

    pub fn failed(stage: &str, err: impl ToString) -> Response {
        Response {
            response_message: None,
            tool_calls: None,
            status: ResponseStatus::Failed,
            error: Some(ErrorInfo {
                stage: stage.to_string(),
                message: err.to_string(),
            }),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status == ResponseStatus::Failed
    }
}

struct SessionGateState {
    active: usize,
    next_ticket: u64,
    serving: u64,
    released_high_water: ModelTime,
}

/// FIFO-ticketed cap on concurrently open sessions.
struct SessionGate {
    state: Mutex<SessionGateState>,
    cv: Condvar,
    queue: Mutex<VecDeque<u64>>,
}

impl SessionGate {
    fn new() -> Self {
        SessionGate {
            state: Mutex::new(SessionGateState {
                active: 0,
                next_ticket: 0,
                serving: 0,
                released_high_water: ModelTime::ZERO,
            }),
            cv: Condvar::new(),
            queue: Mutex::new(VecDeque::new()),
        }
    }

    fn acquire(&self, cap: usize, requested_birth: ModelTime) -> ModelTime {
        let ticket = {
            let mut st = self.state.lock().unwrap();
            let t = st.next_ticket;
            st.next_ticket += 1;
            t
        };
        self.queue.lock().unwrap().push_back(ticket);
        let mut st = self.state.lock().unwrap();
        loop {
            let is_next = self.queue.lock().unwrap().front() == Some(&ticket);
            if is_next && st.active < cap {
                st.active += 1;
                st.serving = ticket;
                self.queue.lock().unwrap().pop_front();
                let birth = requested_birth.max(st.released_high_water);
                self.cv.notify_all();
                return birth;
            }
            st = self.cv.wait(st).unwrap();
        }
    }

    fn release(&self, final_time: ModelTime) {
        let mut st = self.state.lock().unwrap();
        st.active -= 1;
        if final_time > st.released_high_water {
            st.released_high_water = final_time;
        }
        drop(st);
        self.cv.notify_all();
    }
}

/// The assembled kernel: managers, scheduler, agent directory.
pub struct Kernel {
    cfg: KernelConfig,
    table: Arc<SysCallTable>,
    engine: Arc<Engine>,
    core: Arc<SimulatedCore>,
    ctx: Arc<ContextManager>,
    mem: Arc<MemoryManager>,
    sto: Arc<StorageManager>,
    tools: Arc<crate::tool::ToolManager>,
    access: Arc<AccessManager>,
    gate: SessionGate,
}

/// Cloneable handle to a kernel.
#[derive(Clone)]
pub struct KernelHandle {
    inner: Arc<Kernel>,
}

/// Construct cores, managers, queues, and the scheduler from a validated
/// config. Nothing runs until [`KernelHandle::start`].
pub fn bootstrap_kernel(cfg: KernelConfig) -> Result<KernelHandle> {
    cfg.validate()?;
    if cfg.core_kind()? == CoreKind::Http {
        return Err(KernelError::Config {
            key: "core.kind".into(),
            message: "the http core is wall-time only and cannot back the model-time scheduler"
                .into(),
        });
    }
    let table = Arc::new(SysCallTable::new());
    let core = Arc::new(SimulatedCore::new(cfg.core_config())?);
    let ctx = Arc::new(ContextManager::new());
    let sto = Arc::new(StorageManager::open(&cfg.storage.root)?);
    let mem = Arc::new(MemoryManager::new(cfg.memory_config(), Arc::clone(&sto))?);
    let tools = Arc::new(crate::tool::ToolManager::new());
    for reg in cfg.tool_registrations()? {
        tools.register_tool(reg)?;
    }
    let access = Arc::new(AccessManager::new(cfg.access_config(), Arc::clone(&table)));
    let engine = Engine::new(
        cfg.scheduler_config(),
        cfg.snapshot_mode()?,
        Arc::clone(&core),
        Arc::clone(&ctx),
        Arc::clone(&mem),
        Arc::clone(&sto),
        Arc::clone(&tools),
    )?;
    Ok(KernelHandle {
        inner: Arc::new(Kernel {
            cfg,
            table,
            engine,
            core,
            ctx,
            mem,
            sto,
            tools,
            access,
            gate: SessionGate::new(),
        }),
    })
}

impl KernelHandle {
    pub fn register_agent(&self, name: &str) -> AgentId {
        self.inner.table.register_agent(name)
    }

    pub fn start(&self) -> Result<()> {
        self.inner.engine.start()
    }

    pub fn stop(&self) -> Result<()> {
        self.inner.engine.stop()
    }

    /// Open a submission session for an agent. Blocks while the configured
    /// concurrent-agent cap is reached; the granted session then starts no
    /// earlier than the releasing agent's final model time.
    pub fn session(&self, aid: AgentId) -> Result<AgentSession> {
        self.session_at(aid, self.inner.engine.high_water())
    }

    /// Open a session at an explicit birth time (the benchmark harness opens
    /// every agent's session at time zero before the workload starts).
    pub fn session_at(&self, aid: AgentId, birth: ModelTime) -> Result<AgentSession> {
        if !self.inner.table.is_registered(aid) {
            return Err(KernelError::UnknownAgent(aid));
        }
        let cap = self.inner.cfg.scheduler.max_concurrent_agents;
        let birth = self.inner.gate.acquire(cap, birth);
        let guard = self.inner.engine.open_bound(birth, aid);
        Ok(AgentSession {
            kernel: Arc::clone(&self.inner),
            aid,
            now: birth,
            guard: Some(guard),
            pending: None,
        })
    }

    /// Blocking one-shot submit: opens a session at the current work horizon.
    pub fn submit(&self, aid: AgentId, query: Query) -> Result<Response> {
        let mut session = self.session(aid)?;
        Ok(session.submit(query))
    }

    /// Awaitable submit: runs the blocking pipeline on its own thread.
    pub fn submit_async(&self, aid: AgentId, query: Query) -> PendingResponse {
        let handle = self.clone();
        PendingResponse {
            join: std::thread::spawn(move || match handle.submit(aid, query) {
                Ok(r) => r,
                Err(e) => Response::failed("submit", e),
            }),
        }
    }

    /// Execute an access syscall inline: access-related calls bypass the
    /// scheduler entirely and complete on the caller's context at zero model
    /// cost.
    pub fn access_request(
        &self,
        aid: AgentId,
        op: crate::access::AccessOp,
    ) -> Result<Arc<SysCall>> {
        let at = self.inner.engine.high_water();
        let call = self
            .inner
            .table
            .create_syscall(aid, SysCallRequest::Access(op.clone()), at)?;
        call.set_status(crate::syscall::LifecycleState::Queued)?;
        call.set_status(crate::syscall::LifecycleState::Executing)?;
        let answer = match op {
            crate::access::AccessOp::CheckAccess { sid, tid } => {
                self.inner.access.check_access(sid, tid).to_string()
            }
            crate::access::AccessOp::AskPermission { aid, operation } => self
                .inner
                .access
                .ask_permission(aid, &operation)
                .to_string(),
        };
        call.complete(
            Response::text(answer),
            at,
            crate::syscall::LifecycleState::Done,
        )?;
        Ok(call)
    }

    /// Put `sid` into `tid`'s privilege group, subject to the irreversible-op
    /// intervention gate.
    pub fn add_privilege(&self, sid: AgentId, tid: AgentId) -> Result<()> {
        self.inner.access.gate(tid, tid, "privilege_change")?;
        self.inner.access.add_privilege(sid, tid)
    }

    pub fn check_access(&self, sid: AgentId, tid: AgentId) -> bool {
        self.inner.access.check_access(sid, tid)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.inner.access.audit_log()
    }

    pub fn take_trace(&self) -> ScheduleTrace {
        self.inner.engine.take_trace()
    }

    pub fn trace_snapshot(&self) -> ScheduleTrace {
        self.inner.engine.trace_snapshot()
    }

    pub fn queue_depths(&self) -> [usize; 4] {
        self.inner.engine.queue_depths()
    }

    pub fn context_manager(&self) -> &Arc<ContextManager> {
        &self.inner.ctx
    }

    pub fn memory_manager(&self) -> &Arc<MemoryManager> {
        &self.inner.mem
    }

    pub fn storage_manager(&self) -> &Arc<StorageManager> {
        &self.inner.sto
    }

    pub fn tool_manager(&self) -> &Arc<crate::tool::ToolManager> {
        &self.inner.tools
    }

    pub fn access_manager(&self) -> &Arc<AccessManager> {
        &self.inner.access
    }

    pub fn core(&self) -> &Arc<SimulatedCore> {
        &self.inner.core
    }

    pub fn config(&self) -> &KernelConfig {
        &self.inner.cfg
    }

    pub fn agent_count(&self) -> usize {
        self.inner.table.agent_count()
    }

    /// Create and immediately dispatch a raw syscall under a fresh source at
    /// the agent's current horizon. Test/benchmark surface; agent code goes
    /// through sessions. Pair with [`KernelHandle::wait_raw`].
    pub fn dispatch_raw(
        &self,
        aid: AgentId,
        request: SysCallRequest,
        at: ModelTime,
    ) -> Result<Arc<SysCall>> {
        let mut batch = self.dispatch_raw_batch(vec![(aid, request)], at)?;
        Ok(batch.remove(0))
    }

    /// Dispatch several raw syscalls at one arrival time under a single held
    /// source, so their relative order is fixed before any loop can pop.
    pub fn dispatch_raw_batch(
        &self,
        requests: Vec<(AgentId, SysCallRequest)>,
        at: ModelTime,
    ) -> Result<Vec<Arc<SysCall>>> {
        let guard = self.inner.engine.open_bound(at, 0);
        let mut calls = Vec::with_capacity(requests.len());
        for (aid, request) in requests {
            let call = self.inner.table.create_syscall(aid, request, at)?;
            self.inner.engine.dispatch(&guard, Arc::clone(&call))?;
            calls.push(call);
        }
        guard.release();
        Ok(calls)
    }

    /// Wait for a raw-dispatched call and drain its completion bound.
    pub fn wait_raw(&self, call: &Arc<SysCall>) -> crate::syscall::Completion {
        let completion = call.signal().wait();
        if let Some(g) = self.inner.engine.adopt_completion(call.call_id()) {
            g.release();
        }
        completion
    }
}

pub struct PendingResponse {
    join: std::thread::JoinHandle<Response>,
}

impl PendingResponse {
    pub fn wait(self) -> Response {
        self.join
            .join()
            .unwrap_or_else(|_| Response::failed("submit", "submitter thread panicked"))
    }
}

struct PendingQuery {
    call: Arc<SysCall>,
    query: Query,
    file_op: Option<FileOp>,
}

/// An agent's submission context. Holds the agent's model-time position and,
/// while the agent is between dispatches, the scheduler bound that keeps
/// cross-agent ordering deterministic. The bound is parked (released) while
/// the session blocks on a completion signal; the completing engine hands the
/// waiter a fresh bound atomically with the signal, which the session adopts.
pub struct AgentSession {
    kernel: Arc<Kernel>,
    aid: AgentId,
    now: ModelTime,
    guard: Option<BoundGuard>,
    pending: Option<PendingQuery>,
}

impl AgentSession {
    pub fn aid(&self) -> AgentId {
        self.aid
    }

    /// The agent's position on the model-time axis: the completion time of
    /// the last response it received.
    pub fn now(&self) -> ModelTime {
        self.now
    }

    pub fn submit(&mut self, query: Query) -> Response {
        self.submit_with(query, GenOverrides::default())
    }

    pub fn submit_with(&mut self, query: Query, overrides: GenOverrides) -> Response {
        match self.begin_with(query, overrides) {
            Ok(()) => self.finish(),
            Err(e) => Response::failed("submit", e),
        }
    }

    /// Dispatch the query's first syscall without waiting. The harness uses
    /// this to lay down the initial wave of every agent from one thread, in
    /// agent order, before the per-agent threads take over.
    pub fn begin(&mut self, query: Query) -> Result<()> {
        self.begin_with(query, GenOverrides::default())
    }

    pub fn begin_with(&mut self, query: Query, overrides: GenOverrides) -> Result<()> {
        assert!(self.pending.is_none(), "finish() the previous query first");
        query.validate()?;
        match query.action_type {
            ActionType::Chat | ActionType::ToolUse => {
                let call = self.kernel.table.create_syscall(
                    self.aid,
                    SysCallRequest::Llm {
                        query: query.clone(),
                        overrides,
                    },
                    self.now,
                )?;
                self.dispatch_held(&call)?;
                self.park();
                self.pending = Some(PendingQuery {
                    call,
                    query,
                    file_op: None,
                });
                Ok(())
            }
            ActionType::FileOperation => {
                let content = &query.messages.last().expect("validated non-empty").content;
                let op: FileOp = serde_json::from_str(content).map_err(|e| {
                    KernelError::BadQuery(format!("file_operation payload is not a command: {e}"))
                })?;
                let owner = op.owner().unwrap_or(self.aid);
                if owner != self.aid {
                    self.kernel
                        .access
                        .gate(self.aid, owner, op.syscall_name())?;
                }
                let storage_op = self.storage_op_for(&op, owner);
                let call = self.kernel.table.create_syscall(
                    self.aid,
                    SysCallRequest::Storage(storage_op),
                    self.now,
                )?;
                self.dispatch_held(&call)?;
                self.park();
                self.pending = Some(PendingQuery {
                    call,
                    query,
                    file_op: Some(op),
                });
                Ok(())
            }
        }
    }

    /// Dispatch a call under the session's held bound.
    fn dispatch_held(&self, call: &Arc<SysCall>) -> Result<()> {
        let guard = self.guard.as_ref().expect("session bound is held");
        self.kernel.engine.dispatch(guard, Arc::clone(call))
    }

    /// Release the session bound before blocking on a signal: a blocked
    /// session cannot dispatch, and its awaited call may have later segments
    /// that must stay poppable.
    fn park(&mut self) {
        if let Some(g) = self.guard.take() {
            g.release();
        }
    }

    /// Block on a call's completion and adopt the bound the engine created
    /// for the waiter, advancing the session clock.
    fn await_call(&mut self, call: &Arc<SysCall>) -> crate::syscall::Completion {
        let completion = call.signal().wait();
        let adopted = self.kernel.engine.adopt_completion(call.call_id());
        if completion.finished_at > self.now {
            self.now = completion.finished_at;
        }
        match (self.guard.as_mut(), adopted) {
            (Some(g), Some(a)) => {
                g.advance_to(self.now);
                a.release();
            }
            (Some(g), None) => g.advance_to(self.now),
            (None, Some(mut a)) => {
                a.advance_to(self.now);
                self.guard = Some(a);
            }
            (None, None) => {
                // Completion bound drained elsewhere; re-anchor at a safe point.
                let at = self.now.max(self.kernel.engine.high_water());
                self.now = at;
                self.guard = Some(self.kernel.engine.open_bound(at, self.aid));
            }
        }
        completion
    }

    fn storage_op_for(&self, op: &FileOp, owner: AgentId) -> StorageOp {
        let aname = |name: &str| format!("a{owner}_{name}");
        match op {
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
        }
    }

    /// Wait out the pending query's pipeline and assemble the final response.
    pub fn finish(&mut self) -> Response {
        let Some(pending) = self.pending.take() else {
            return Response::failed("submit", "no pending query");
        };
        if pending.file_op.is_some() {
            return self.await_call(&pending.call).response;
        }

        let first = self.await_call(&pending.call).response;
        if pending.query.action_type == ActionType::Chat || first.is_failed() {
            return first;
        }

        // tool_use: run each parsed call, then optionally feed results back.
        let calls = first.tool_calls.clone().unwrap_or_default();
        if calls.is_empty() {
            return first;
        }
        let mut tool_syscalls = Vec::with_capacity(calls.len());
        for call in &calls {
            let request = SysCallRequest::Tool(ToolInvocation::from(call.clone()));
            let syscall = match self
                .kernel
                .table
                .create_syscall(self.aid, request, self.now)
            {
                Ok(c) => c,
                Err(e) => return Response::failed("tool", e),
            };
            if let Err(e) = self.dispatch_held(&syscall) {
                return Response::failed("tool", e);
            }
            tool_syscalls.push(syscall);
        }
        self.park();
        let mut outputs = Vec::with_capacity(tool_syscalls.len());
        let mut failure: Option<ErrorInfo> = None;
        for (syscall, call) in tool_syscalls.iter().zip(&calls) {
            let done = self.await_call(syscall);
            if done.response.is_failed() {
                failure.get_or_insert(done.response.error.clone().unwrap_or(ErrorInfo {
                    stage: "tool".into(),
                    message: "tool failed".into(),
                }));
            } else {
                outputs.push(format_tool_output(
                    &call.name,
                    done.response
                        .response_message
                        .as_deref()
                        .unwrap_or_default(),
                ));
            }
        }
        if let Some(info) = failure {
            return Response {
                response_message: None,
                tool_calls: Some(calls),
                status: ResponseStatus::Failed,
                error: Some(info),
            };
        }

        if self.kernel.cfg.sdk.tool_followup {
            let followup = followup_query(
                &pending.query,
                first.response_message.as_deref().unwrap_or(""),
                &outputs,
            );
            let call = match self.kernel.table.create_syscall(
                self.aid,
                SysCallRequest::Llm {
                    query: followup,
                    overrides: GenOverrides::default(),
                },
                self.now,
            ) {
                Ok(c) => c,
                Err(e) => return Response::failed("llm", e),
            };
            if let Err(e) = self.dispatch_held(&call) {
                return Response::failed("llm", e);
            }
            self.park();
            let done = self.await_call(&call);
            if done.response.is_failed() {
                return done.response;
            }
            Response {
                response_message: done.response.response_message,
                tool_calls: Some(calls),
                status: ResponseStatus::Ok,
                error: None,
            }
        } else {
            Response {
                response_message: Some(outputs.join("\n")),
                tool_calls: Some(calls),
                status: ResponseStatus::Ok,
                error: None,
            }
        }
    }

    /// Gated direct memory access. Operations on another agent's block pass
    /// the privilege check, and clears additionally need user intervention.
    pub fn memory_op(&mut self, op: MemoryOp) -> Response {
        let (target, op_name) = match &op {
            MemoryOp::Alloc { aid } => (*aid, "mem_alloc"),
            MemoryOp::Read { aid, .. } => (*aid, "mem_read"),
            MemoryOp::Write { aid, .. } => (*aid, "mem_write"),
            MemoryOp::Clear { aid } => (*aid, "mem_clear"),
        };
        if target != self.aid {
            if let Err(e) = self.kernel.access.gate(self.aid, target, op_name) {
                return Response::failed("access", e);
            }
        }
        let call =
            match self
                .kernel
                .table
                .create_syscall(self.aid, SysCallRequest::Memory(op), self.now)
            {
                Ok(c) => c,
                Err(e) => return Response::failed("memory", e),
            };
        if let Err(e) = self.dispatch_held(&call) {
            return Response::failed("memory", e);
        }
        self.park();
        self.await_call(&call).response
    }

    /// The last dispatched syscall of the pending query (test instrumentation).
    pub fn pending_call(&self) -> Option<&Arc<SysCall>> {
        self.pending.as_ref().map(|p| &p.call)
    }
}

impl Drop for AgentSession {
    fn drop(&mut self) {
        self.kernel.gate.release(self.now);
    }
}

/// Render one tool result line for the follow-up prompt.
pub fn format_tool_output(name: &str, output: &str) -> String {
    format!("{name}: {output}")
}

/// Build the follow-up query that feeds tool results back to the LLM. Shared
/// by the kernel facade and the unscheduled baseline so both produce the same
/// prompts (and therefore the same deterministic generations).
pub fn followup_query(original: &Query, assistant_text: &str, tool_outputs: &[String]) -> Query {
    let mut messages = original.messages.clone();
    messages.push(Message::new("assistant", assistant_text));
    messages.push(Message::new(
        "tool",
        &format!("tool results:\n{}", tool_outputs.join("\n")),
    ));
    Query {
        messages,
        tools: Vec::new(),
        action_type: ActionType::Chat,
        message_return_type: original.message_return_type.clone(),
    }
}

/// A module lifecycle hook: call to start or stop the kernel.
pub type LifecycleHook = Box<dyn Fn() -> Result<()> + Send + Sync>;

/// Lifecycle convenience mirroring the module bootstrap hooks: build a kernel
/// and hand back start/stop closures.
pub fn use_kernel(cfg: KernelConfig) -> Result<(KernelHandle, LifecycleHook, LifecycleHook)> {
    let handle = bootstrap_kernel(cfg)?;
    let starter: LifecycleHook = {
        let h = handle.clone();
        Box::new(move || h.start())
    };
    let stopper: LifecycleHook = {
        let h = handle.clone();
        Box::new(move || h.stop())
    };
    Ok((handle, starter, stopper))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_accepts_both_spellings() {
        assert_eq!(normalize_action_type("chat").unwrap(), ActionType::Chat);
        assert_eq!(
            normalize_action_type("tool_use").unwrap(),
            ActionType::ToolUse
        );
        assert_eq!(
            normalize_action_type("call_tool").unwrap(),
            ActionType::ToolUse
        );
        assert_eq!(
            normalize_action_type("file_operation").unwrap(),
            ActionType::FileOperation
        );
        assert_eq!(
            normalize_action_type("operate_file").unwrap(),
            ActionType::FileOperation
        );
        assert!(normalize_action_type("browse").is_err());
    }

    #[test]
    fn query_validation() {
        let empty = Query {
            messages: vec![],
            tools: vec![],
            action_type: ActionType::Chat,
            message_return_type: "text".into(),
        };
        assert!(empty.validate().is_err());

        let toolless = Query {
            messages: vec![Message::new("user", "hi")],
            tools: vec![],
            action_type: ActionType::ToolUse,
            message_return_type: "text".into(),
        };
        assert!(toolless.validate().is_err());

        assert!(Query::chat(vec![("user", "hi")]).validate().is_ok());
    }

    #[test]
    fn response_invariant_helpers() {
        let ok = Response::text("hello");
        assert!(!ok.is_failed());
        assert!(ok.response_message.is_some());
        let bad = Response::failed("llm", "boom");
        assert!(bad.is_failed());
        assert_eq!(bad.error.as_ref().unwrap().stage, "llm");
    }

    #[test]
    fn file_op_round_trips_through_query_payload() {
        let op = FileOp::Write {
            name: "notes".into(),
            text: "remember this".into(),
            owner: None,
        };
        let q = Query::file_operation(&op);
        let parsed: FileOp = serde_json::from_str(&q.messages[0].content).unwrap();
        assert_eq!(parsed, op);
    }
}
