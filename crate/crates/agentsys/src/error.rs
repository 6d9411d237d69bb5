//! Error types shared across kernel modules.

use thiserror::Error;

use crate::syscall::LifecycleState;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown agent id {0}")]
    UnknownAgent(u64),

    #[error("illegal lifecycle transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: LifecycleState,
        to: LifecycleState,
    },

    #[error("syscall {0} already completed")]
    AlreadyCompleted(u64),

    #[error("kernel is not running")]
    NotRunning,

    #[error("kernel already running")]
    AlreadyRunning,

    #[error("core capacity exceeded: all {slots} slot(s) busy")]
    CapacityExceeded { slots: usize },

    #[error("context error: {0}")]
    Context(String),

    #[error("validation error for parameter `{param}`: {message}")]
    Validation { param: String, message: String },

    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("tool `{tool}` failed: {message}")]
    ToolFailed { tool: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("corrupt record at {path}: {detail}")]
    Corrupt { path: String, detail: String },

    #[error("record of {size} bytes cannot fit under the memory threshold of {limit} bytes")]
    OversizeRecord { size: usize, limit: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("tool-call parse error: {0}")]
    ToolCallParse(String),

    #[error("access denied: agent {sid} may not touch resources of agent {tid}")]
    AccessDenied { sid: u64, tid: u64 },

    #[error("operation `{operation}` rejected by user intervention policy")]
    PermissionRefused { operation: String },

    #[error("query rejected: {0}")]
    BadQuery(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("http core error: {0}")]
    Http(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Structured error carried inside a failed [`crate::sdk::Response`]:
/// which pipeline stage failed and why.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ErrorInfo {
    pub stage: String,
    pub message: String,
}

impl ErrorInfo {
    pub fn new(stage: &str, err: &KernelError) -> Self {
        ErrorInfo {
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }
}
