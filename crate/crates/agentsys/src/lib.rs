//! Agent-serving kernel: decomposes agent queries into schedulable system
//! calls and executes them against resource modules — LLM core, context,
//! memory, storage, tools, access control — under a centralized preemptive
//! scheduler.
//!
//! All scheduling and metrics run on a deterministic model-time clock rather
//! than wall time: the simulated LLM core has an explicit cost model, and the
//! scheduler's conservative gating makes every run's schedule a pure function
//! of (config, workload, seed) even though agents submit from real threads.

pub mod access;
pub mod config;
pub mod context;
pub mod error;
pub mod llm;
pub mod memory;
pub mod sched;
pub mod sdk;
pub mod storage;
pub mod syscall;
pub mod time;
pub mod tool;

pub use config::KernelConfig;
pub use error::{ErrorInfo, KernelError, Result};
pub use sdk::{
    bootstrap_kernel, normalize_action_type, ActionType, AgentSession, FileOp, KernelHandle,
    Message, PendingResponse, Query, Response, ResponseStatus,
};
pub use syscall::{AgentId, CallId, LifecycleState, SysCall, SysCallKind, SysCallRequest};
pub use time::ModelTime;
