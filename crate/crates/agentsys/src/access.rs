//! Access manager: privilege groups for inter-agent resource access and a
//! user-intervention gate for irreversible operations.
//!
//! Access syscalls are never dispatched through the scheduler; the facade
//! executes them inline. `check_access` is pure; gate decisions are written to
//! an audit log so acceptance runs can verify that every foreign clear was
//! checked.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{KernelError, Result};
use crate::syscall::{AgentId, SysCallTable};

/// An access syscall payload.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AccessOp {
    CheckAccess { sid: AgentId, tid: AgentId },
    AskPermission { aid: AgentId, operation: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonInteractivePolicy {
    Deny,
    Allow,
}

#[derive(Debug, Clone)]
pub struct AccessConfig {
    pub irreversible_ops: Vec<String>,
    pub noninteractive_default: NonInteractivePolicy,
}

impl Default for AccessConfig {
    fn default() -> Self {
        AccessConfig {
            irreversible_ops: vec![
                "sto_clear".into(),
                "mem_clear".into(),
                "privilege_change".into(),
            ],
            noninteractive_default: NonInteractivePolicy::Deny,
        }
    }
}

/// One permission decision, for post-run verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub sid: AgentId,
    pub tid: AgentId,
    pub operation: String,
    pub allowed: bool,
    pub reason: String,
}

/// Interactive confirmation channel: presents a prompt, returns the user's
/// reply, or `None` when the channel is closed.
pub type PromptFn = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

pub struct AccessManager {
    cfg: AccessConfig,
    agents: Arc<SysCallTable>,
    groups: RwLock<HashMap<AgentId, HashSet<AgentId>>>,
    audit: Mutex<Vec<AuditRecord>>,
    prompt: Mutex<Option<PromptFn>>,
}

impl AccessManager {
    pub fn new(cfg: AccessConfig, agents: Arc<SysCallTable>) -> Self {
        AccessManager {
            cfg,
            agents,
            groups: RwLock::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
            prompt: Mutex::new(None),
        }
    }

    /// Install an interactive confirmation channel (stdin in the CLI, a stub
    /// in tests). Without one, decisions fall back to the configured policy.
    pub fn set_prompt(&self, prompt: PromptFn) {
        *self.prompt.lock().unwrap() = Some(prompt);
    }

    /// Add `sid` to `tid`'s privilege group. Idempotent.
    pub fn add_privilege(&self, sid: AgentId, tid: AgentId) -> Result<()> {
        if !self.agents.is_registered(sid) {
            return Err(KernelError::UnknownAgent(sid));
        }
        if !self.agents.is_registered(tid) {
            return Err(KernelError::UnknownAgent(tid));
        }
        self.groups
            .write()
            .unwrap()
            .entry(tid)
            .or_default()
            .insert(sid);
        Ok(())
    }

    /// True iff `sid` may touch `tid`'s resources: self-access is implicit,
    /// otherwise membership in the target's privilege group decides. Pure.
    pub fn check_access(&self, sid: AgentId, tid: AgentId) -> bool {
        if sid == tid {
            return true;
        }
        self.groups
            .read()
            .unwrap()
            .get(&tid)
            .is_some_and(|g| g.contains(&sid))
    }

    /// Confirm an irreversible operation on the interactive channel; returns
    /// true only for an affirmative reply. Non-interactive mode answers with
    /// the configured policy default; a closed channel denies.
    pub fn ask_permission(&self, aid: AgentId, operation: &str) -> bool {
        let prompt = self.prompt.lock().unwrap().clone();
        match prompt {
            Some(ask) => {
                let question = format!(
                    "agent {aid} requests irreversible operation `{operation}`. Confirm? (yes/no): "
                );
                match ask(&question) {
                    Some(reply) => reply.trim().eq_ignore_ascii_case("yes"),
                    None => false,
                }
            }
            None => matches!(self.cfg.noninteractive_default, NonInteractivePolicy::Allow),
        }
    }

    pub fn is_irreversible(&self, operation: &str) -> bool {
        self.cfg.irreversible_ops.iter().any(|o| o == operation)
    }

    /// Full facade gate for an operation `sid` wants to run on `tid`'s
    /// resources: privilege check first, then user intervention when the
    /// operation is irreversible. Every decision is audited.
    pub fn gate(&self, sid: AgentId, tid: AgentId, operation: &str) -> Result<()> {
        if !self.check_access(sid, tid) {
            self.record(sid, tid, operation, false, "privilege check failed");
            return Err(KernelError::AccessDenied { sid, tid });
        }
        if self.is_irreversible(operation) && !self.ask_permission(sid, operation) {
            self.record(sid, tid, operation, false, "user intervention denied");
            return Err(KernelError::PermissionRefused {
                operation: operation.to_string(),
            });
        }
        self.record(sid, tid, operation, true, "allowed");
        Ok(())
    }

    fn record(&self, sid: AgentId, tid: AgentId, operation: &str, allowed: bool, reason: &str) {
        self.audit.lock().unwrap().push(AuditRecord {
            sid,
            tid,
            operation: operation.to_string(),
            allowed,
            reason: reason.to_string(),
        });
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.audit.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manager_with(n: usize) -> AccessManager {
        let table = Arc::new(SysCallTable::new());
        for i in 0..n {
            table.register_agent(&format!("agent{i}"));
        }
        AccessManager::new(AccessConfig::default(), table)
    }

    #[test]
    fn add_then_check() {
        let mgr = manager_with(3);
        mgr.add_privilege(1, 2).unwrap();
        assert!(mgr.check_access(1, 2));
        assert!(!mgr.check_access(2, 1)); // not symmetric
        assert!(!mgr.check_access(3, 2));
    }

    #[test]
    fn add_is_idempotent_and_scoped() {
        let mgr = manager_with(3);
        mgr.add_privilege(1, 2).unwrap();
        mgr.add_privilege(1, 2).unwrap();
        assert!(mgr.check_access(1, 2));
        assert!(!mgr.check_access(1, 3));
    }

    #[test]
    fn self_access_is_implicit() {
        let mgr = manager_with(1);
        assert!(mgr.check_access(1, 1));
    }

    #[test]
    fn unknown_agents_rejected() {
        let mgr = manager_with(1);
        assert!(matches!(
            mgr.add_privilege(1, 99),
            Err(KernelError::UnknownAgent(99))
        ));
        assert!(matches!(
            mgr.add_privilege(99, 1),
            Err(KernelError::UnknownAgent(99))
        ));
    }

    #[test]
    fn check_is_pure_and_repeatable() {
        let mgr = manager_with(2);
        mgr.add_privilege(1, 2).unwrap();
        for _ in 0..10 {
            assert!(mgr.check_access(1, 2));
            assert!(!mgr.check_access(2, 1));
        }
    }

    #[test]
    fn random_ops_match_set_of_sets_oracle() {
        let mgr = manager_with(8);
        let mut oracle: HashMap<AgentId, HashSet<AgentId>> = HashMap::new();
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            state >> 33
        };
        for _ in 0..2000 {
            let sid = next() % 8 + 1;
            let tid = next() % 8 + 1;
            if next() % 2 == 0 {
                mgr.add_privilege(sid, tid).unwrap();
                oracle.entry(tid).or_default().insert(sid);
            } else {
                let expect = sid == tid || oracle.get(&tid).is_some_and(|g| g.contains(&sid));
                assert_eq!(mgr.check_access(sid, tid), expect);
            }
        }
    }

    #[test]
    fn ask_permission_interactive_replies() {
        let mgr = manager_with(1);
        mgr.set_prompt(Arc::new(|_q| Some("  YES \n".to_string())));
        assert!(mgr.ask_permission(1, "sto_clear"));
        mgr.set_prompt(Arc::new(|_q| Some("no".to_string())));
        assert!(!mgr.ask_permission(1, "sto_clear"));
        mgr.set_prompt(Arc::new(|_q| None)); // closed channel
        assert!(!mgr.ask_permission(1, "sto_clear"));
    }

    #[test]
    fn noninteractive_policy_default_denies() {
        let mgr = manager_with(1);
        assert!(!mgr.ask_permission(1, "sto_clear"));
        let table = Arc::new(SysCallTable::new());
        table.register_agent("a");
        let allow = AccessManager::new(
            AccessConfig {
                noninteractive_default: NonInteractivePolicy::Allow,
                ..AccessConfig::default()
            },
            table,
        );
        assert!(allow.ask_permission(1, "sto_clear"));
    }

    #[test]
    fn gate_audits_every_decision() {
        let mgr = manager_with(3);
        // Foreign clear without privilege: denied at the access check.
        assert!(mgr.gate(1, 2, "sto_clear").is_err());
        // With privilege but deny policy: denied at user intervention.
        mgr.add_privilege(1, 2).unwrap();
        assert!(matches!(
            mgr.gate(1, 2, "sto_clear"),
            Err(KernelError::PermissionRefused { .. })
        ));
        // Reversible operation needs no intervention.
        mgr.gate(1, 2, "sto_read").unwrap();
        let log = mgr.audit_log();
        assert_eq!(log.len(), 3);
        assert!(!log[0].allowed);
        assert!(!log[1].allowed);
        assert!(log[2].allowed);
    }
}
