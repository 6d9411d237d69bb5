//! System calls: the schedulable unit of agent work.
//!
//! A syscall is created on the caller's context, handed to the scheduler, and
//! mutated only by the processor loop that owns it. The submitting caller
//! blocks on the completion signal and reads the response after it fires.

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use crate::error::{KernelError, Result};
use crate::memory::MemoryOp;
use crate::sdk::{Query, Response};
use crate::storage::StorageOp;
use crate::time::ModelTime;
use crate::tool::ToolInvocation;

pub type CallId = u64;
pub type AgentId = u64;

/// Which resource module executes the call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SysCallKind {
    Llm,
    Memory,
    Storage,
    Tool,
    Access,
}

impl SysCallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SysCallKind::Llm => "llm",
            SysCallKind::Memory => "memory",
            SysCallKind::Storage => "storage",
            SysCallKind::Tool => "tool",
            SysCallKind::Access => "access",
        }
    }
}

/// Lifecycle of a syscall. Only LLM generation is preemptible, so `Suspended`
/// is reachable only for `SysCallKind::Llm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Created,
    Queued,
    Executing,
    Suspended,
    Done,
    Failed,
}

impl LifecycleState {
    pub fn is_terminal(self) -> bool {
        matches!(self, LifecycleState::Done | LifecycleState::Failed)
    }

    fn transition_legal(self, to: LifecycleState, kind: SysCallKind) -> bool {
        use LifecycleState::*;
        match (self, to) {
            (Created, Queued) => true,
            (Queued, Executing) => true,
            (Executing, Suspended) => kind == SysCallKind::Llm,
            (Suspended, Executing) => true,
            (Executing, Done) | (Executing, Failed) => true,
            _ => false,
        }
    }
}

/// Payload of a syscall, one variant per resource module.
#[derive(Debug, Clone)]
pub enum SysCallRequest {
    Llm {
        query: Query,
        overrides: crate::llm::GenOverrides,
    },
    Memory(MemoryOp),
    Storage(StorageOp),
    Tool(ToolInvocation),
    Access(crate::access::AccessOp),
}

impl SysCallRequest {
    pub fn kind(&self) -> SysCallKind {
        match self {
            SysCallRequest::Llm { .. } => SysCallKind::Llm,
            SysCallRequest::Memory(_) => SysCallKind::Memory,
            SysCallRequest::Storage(_) => SysCallKind::Storage,
            SysCallRequest::Tool(_) => SysCallKind::Tool,
            SysCallRequest::Access(_) => SysCallKind::Access,
        }
    }
}

/// The value delivered through the completion signal.
#[derive(Debug, Clone)]
pub struct Completion {
    pub response: Response,
    pub finished_at: ModelTime,
    pub state: LifecycleState,
}

#[derive(Default)]
struct SignalSlot {
    value: Option<Completion>,
    fired: bool,
}

/// One-shot waitable completion signal.
pub struct CompletionSignal {
    slot: Mutex<SignalSlot>,
    cv: Condvar,
}

impl CompletionSignal {
    fn new() -> Self {
        CompletionSignal {
            slot: Mutex::new(SignalSlot::default()),
            cv: Condvar::new(),
        }
    }

    fn fire(&self, completion: Completion) -> Result<()> {
        let mut slot = self.slot.lock().unwrap();
        if slot.fired {
            return Err(KernelError::AlreadyCompleted(0));
        }
        slot.fired = true;
        slot.value = Some(completion);
        self.cv.notify_all();
        Ok(())
    }

    /// Block until the signal fires; repeated waits observe the same value.
    pub fn wait(&self) -> Completion {
        let mut slot = self.slot.lock().unwrap();
        while !slot.fired {
            slot = self.cv.wait(slot).unwrap();
        }
        slot.value.clone().expect("fired signal carries a value")
    }

    pub fn is_fired(&self) -> bool {
        self.slot.lock().unwrap().fired
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stamps {
    start_time: Option<ModelTime>,
    end_time: Option<ModelTime>,
}

/// A schedulable unit of agent work. See module docs for the ownership rules.
pub struct SysCall {
    call_id: CallId,
    agent_id: AtomicU64,
    agent_name: String,
    kind: SysCallKind,
    request: SysCallRequest,
    status: Mutex<LifecycleState>,
    priority: AtomicI64,
    time_limit: Option<ModelTime>,
    created_time: ModelTime,
    stamps: Mutex<Stamps>,
    signal: CompletionSignal,
}

impl SysCall {
    fn new(
        call_id: CallId,
        agent_id: AgentId,
        agent_name: &str,
        request: SysCallRequest,
        created_time: ModelTime,
    ) -> Self {
        SysCall {
            call_id,
            agent_id: AtomicU64::new(agent_id),
            agent_name: agent_name.to_string(),
            kind: request.kind(),
            request,
            status: Mutex::new(LifecycleState::Created),
            priority: AtomicI64::new(0),
            time_limit: None,
            created_time,
            stamps: Mutex::new(Stamps::default()),
            signal: CompletionSignal::new(),
        }
    }

    pub fn call_id(&self) -> CallId {
        self.call_id
    }

    pub fn get_id(&self) -> AgentId {
        self.agent_id.load(Ordering::SeqCst)
    }

    pub fn set_id(&self, aid: AgentId) {
        self.agent_id.store(aid, Ordering::SeqCst);
    }

    pub fn agent_name(&self) -> &str {
        &self.agent_name
    }

    pub fn kind(&self) -> SysCallKind {
        self.kind
    }

    pub fn request(&self) -> &SysCallRequest {
        &self.request
    }

    pub fn get_status(&self) -> LifecycleState {
        *self.status.lock().unwrap()
    }

    /// Atomically transition the lifecycle state, rejecting illegal edges.
    pub fn set_status(&self, to: LifecycleState) -> Result<()> {
        let mut status = self.status.lock().unwrap();
        if !status.transition_legal(to, self.kind) {
            return Err(KernelError::IllegalTransition { from: *status, to });
        }
        *status = to;
        Ok(())
    }

    pub fn get_priority(&self) -> i64 {
        self.priority.load(Ordering::SeqCst)
    }

    /// Stored but not consulted by the FIFO/RR strategies.
    pub fn set_priority(&self, p: i64) {
        self.priority.store(p, Ordering::SeqCst);
    }

    pub fn time_limit(&self) -> Option<ModelTime> {
        self.time_limit
    }

    pub fn created_time(&self) -> ModelTime {
        self.created_time
    }

    pub fn start_time(&self) -> Option<ModelTime> {
        self.stamps.lock().unwrap().start_time
    }

    pub fn end_time(&self) -> Option<ModelTime> {
        self.stamps.lock().unwrap().end_time
    }

    /// Record the start of the first executing segment (later segments keep
    /// the original start).
    pub fn mark_started(&self, at: ModelTime) {
        let mut stamps = self.stamps.lock().unwrap();
        stamps.start_time.get_or_insert(at);
    }

    pub fn signal(&self) -> &CompletionSignal {
        &self.signal
    }

    /// Response is only present once the call reached a terminal state.
    pub fn response(&self) -> Option<Response> {
        let slot = self.signal.slot.lock().unwrap();
        slot.value.as_ref().map(|c| c.response.clone())
    }

    /// Store the response, stamp the end time, and fire the completion signal
    /// exactly once.
    pub fn complete(
        &self,
        response: Response,
        finished_at: ModelTime,
        state: LifecycleState,
    ) -> Result<()> {
        debug_assert!(state.is_terminal());
        {
            let status = self.status.lock().unwrap();
            if status.is_terminal() {
                return Err(KernelError::AlreadyCompleted(self.call_id));
            }
        }
        self.set_status(state)?;
        {
            let mut stamps = self.stamps.lock().unwrap();
            stamps.end_time = Some(finished_at);
        }
        self.signal
            .fire(Completion {
                response,
                finished_at,
                state,
            })
            .map_err(|_| KernelError::AlreadyCompleted(self.call_id))
    }
}

impl std::fmt::Debug for SysCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SysCall")
            .field("call_id", &self.call_id)
            .field("agent_id", &self.get_id())
            .field("kind", &self.kind)
            .field("status", &self.get_status())
            .finish()
    }
}

/// Issues monotonically increasing call ids and tracks registered agents.
/// Kernel-assigned logical ids keep runs reproducible.
pub struct SysCallTable {
    next_id: AtomicU64,
    agents: Mutex<Vec<String>>,
}

impl SysCallTable {
    pub fn new() -> Self {
        SysCallTable {
            next_id: AtomicU64::new(1),
            agents: Mutex::new(Vec::new()),
        }
    }

    pub fn register_agent(&self, name: &str) -> AgentId {
        let mut agents = self.agents.lock().unwrap();
        agents.push(name.to_string());
        agents.len() as AgentId
    }

    pub fn agent_name(&self, aid: AgentId) -> Option<String> {
        let agents = self.agents.lock().unwrap();
        if aid == 0 || aid as usize > agents.len() {
            None
        } else {
            Some(agents[aid as usize - 1].clone())
        }
    }

    pub fn is_registered(&self, aid: AgentId) -> bool {
        self.agent_name(aid).is_some()
    }

    pub fn agent_count(&self) -> usize {
        self.agents.lock().unwrap().len()
    }

    /// Build a syscall in `Created` state stamped with the given model time.
    pub fn create_syscall(
        &self,
        agent_id: AgentId,
        request: SysCallRequest,
        created_time: ModelTime,
    ) -> Result<Arc<SysCall>> {
        let name = self
            .agent_name(agent_id)
            .ok_or(KernelError::UnknownAgent(agent_id))?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        Ok(Arc::new(SysCall::new(
            id,
            agent_id,
            &name,
            request,
            created_time,
        )))
    }
}

impl Default for SysCallTable {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdk::Query;

    fn table_with_agent() -> (SysCallTable, AgentId) {
        let table = SysCallTable::new();
        let aid = table.register_agent("travel_agent");
        (table, aid)
    }

    fn chat_request() -> SysCallRequest {
        SysCallRequest::Llm {
            query: Query::chat(vec![("user", "hello")]),
            overrides: Default::default(),
        }
    }

    #[test]
    fn default_construction() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        assert_eq!(call.get_status(), LifecycleState::Created);
        assert_eq!(call.get_priority(), 0);
        assert_eq!(call.agent_name(), "travel_agent");
        assert_eq!(call.kind(), SysCallKind::Llm);
    }

    #[test]
    fn kind_field_passthrough() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(
                aid,
                SysCallRequest::Memory(MemoryOp::Read { aid, rid: 1 }),
                ModelTime::ZERO,
            )
            .unwrap();
        assert_eq!(call.kind(), SysCallKind::Memory);
    }

    #[test]
    fn call_ids_strictly_increase() {
        let (table, aid) = table_with_agent();
        let a = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        let b = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        assert!(b.call_id() > a.call_id());
    }

    #[test]
    fn unknown_agent_rejected() {
        let table = SysCallTable::new();
        let err = table
            .create_syscall(42, chat_request(), ModelTime::ZERO)
            .unwrap_err();
        assert!(matches!(err, KernelError::UnknownAgent(42)));
    }

    #[test]
    fn legal_transition_created_to_queued() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        assert_eq!(call.get_status(), LifecycleState::Queued);
    }

    #[test]
    fn terminal_state_is_sticky() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        call.set_status(LifecycleState::Executing).unwrap();
        call.set_status(LifecycleState::Done).unwrap();
        let err = call.set_status(LifecycleState::Executing).unwrap_err();
        assert!(matches!(err, KernelError::IllegalTransition { .. }));
    }

    #[test]
    fn suspended_unreachable_for_memory_calls() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(
                aid,
                SysCallRequest::Memory(MemoryOp::Alloc { aid }),
                ModelTime::ZERO,
            )
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        call.set_status(LifecycleState::Executing).unwrap();
        let err = call.set_status(LifecycleState::Suspended).unwrap_err();
        assert!(matches!(err, KernelError::IllegalTransition { .. }));
    }

    #[test]
    fn priority_read_your_write() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_priority(5);
        assert_eq!(call.get_priority(), 5);
    }

    #[test]
    fn complete_unblocks_waiter() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        call.set_status(LifecycleState::Executing).unwrap();

        let call2 = Arc::clone(&call);
        let waiter = std::thread::spawn(move || call2.signal().wait());
        call.complete(
            Response::text("hi"),
            ModelTime::from_units(3),
            LifecycleState::Done,
        )
        .unwrap();
        let completion = waiter.join().unwrap();
        assert_eq!(completion.response.response_message.as_deref(), Some("hi"));
        assert_eq!(completion.finished_at, ModelTime::from_units(3));
        assert_eq!(call.end_time(), Some(ModelTime::from_units(3)));
    }

    #[test]
    fn double_completion_errors() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        call.set_status(LifecycleState::Executing).unwrap();
        call.complete(Response::text("a"), ModelTime::ZERO, LifecycleState::Done)
            .unwrap();
        let err = call
            .complete(Response::text("b"), ModelTime::ZERO, LifecycleState::Done)
            .unwrap_err();
        assert!(matches!(err, KernelError::AlreadyCompleted(_)));
    }

    #[test]
    fn failed_completion_stamps_end_time() {
        let (table, aid) = table_with_agent();
        let call = table
            .create_syscall(aid, chat_request(), ModelTime::ZERO)
            .unwrap();
        call.set_status(LifecycleState::Queued).unwrap();
        call.set_status(LifecycleState::Executing).unwrap();
        call.complete(
            Response::failed("llm", "boom"),
            ModelTime::from_units(7),
            LifecycleState::Failed,
        )
        .unwrap();
        assert_eq!(call.get_status(), LifecycleState::Failed);
        assert_eq!(call.end_time(), Some(ModelTime::from_units(7)));
        assert!(call.response().unwrap().is_failed());
    }
}
