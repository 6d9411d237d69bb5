//! Context manager: stores suspended generation state so preempted LLM calls
//! resume without recomputation.
//!
//! Two snapshot forms exist. Text mode saves the decoded text so far; beam mode
//! saves the whole beam tree plus prefill progress, which also covers the case
//! where a call is preempted before its first output token.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{KernelError, Result};
use crate::syscall::CallId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    Text,
    Beam,
}

/// One live decoding hypothesis: its token path and cumulative score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamHypothesis {
    pub tokens: Vec<u32>,
    pub cumulative_score: u128,
}

/// The intermediate search tree of a beam decode, truncated to the beam width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamState {
    pub step: u64,
    /// Sorted by cumulative score descending; every path has length == step.
    pub hypotheses: Vec<BeamHypothesis>,
}

impl BeamState {
    pub fn validate(&self) -> Result<()> {
        for h in &self.hypotheses {
            if h.tokens.len() as u64 != self.step {
                return Err(KernelError::Context(format!(
                    "beam hypothesis length {} != step {}",
                    h.tokens.len(),
                    self.step
                )));
            }
        }
        if self
            .hypotheses
            .windows(2)
            .any(|w| w[0].cumulative_score < w[1].cumulative_score)
        {
            return Err(KernelError::Context("beam hypotheses not sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotPayload {
    Text(String),
    Beam(BeamState),
}

/// Suspended generation state for one syscall (cid == call id).
#[derive(Debug, Clone)]
pub struct DecodeSnapshot {
    pub cid: CallId,
    /// Prompt tokens already prefilled. May be short of the full prompt only
    /// while no output token has been decoded yet.
    pub prefill_progress: u64,
    pub tokens_done: u64,
    /// Guards against resuming with a snapshot taken for a different prompt.
    pub prompt_fingerprint: u64,
    pub payload: SnapshotPayload,
}

impl DecodeSnapshot {
    pub fn mode(&self) -> SnapshotMode {
        match self.payload {
            SnapshotPayload::Text(_) => SnapshotMode::Text,
            SnapshotPayload::Beam(_) => SnapshotMode::Beam,
        }
    }

    pub fn validate(&self, prompt_tokens: u64) -> Result<()> {
        if self.tokens_done > 0 && self.prefill_progress < prompt_tokens {
            return Err(KernelError::Context(
                "decoded tokens exist but prefill is incomplete".into(),
            ));
        }
        if let SnapshotPayload::Beam(beam) = &self.payload {
            beam.validate()?;
            if beam.step != self.tokens_done {
                return Err(KernelError::Context(format!(
                    "beam step {} != tokens_done {}",
                    beam.step, self.tokens_done
                )));
            }
        }
        Ok(())
    }
}

/// Lock-guarded snapshot store keyed by context id.
#[derive(Default)]
pub struct ContextManager {
    store: Mutex<HashMap<CallId, DecodeSnapshot>>,
}

impl ContextManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store a snapshot, replacing any prior snapshot for the same cid.
    pub fn gen_snapshot(&self, cid: CallId, data: DecodeSnapshot) {
        let mut store = self.store.lock().unwrap();
        store.insert(cid, data);
    }

    /// Non-destructive read: the snapshot stays stored.
    pub fn gen_restore(&self, cid: CallId) -> Option<DecodeSnapshot> {
        let store = self.store.lock().unwrap();
        store.get(&cid).cloned()
    }

    pub fn check_restore(&self, cid: CallId) -> bool {
        self.store.lock().unwrap().contains_key(&cid)
    }

    /// Idempotent removal.
    pub fn clear_restore(&self, cid: CallId) {
        self.store.lock().unwrap().remove(&cid);
    }

    pub fn len(&self) -> usize {
        self.store.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cid: CallId, text: &str) -> DecodeSnapshot {
        DecodeSnapshot {
            cid,
            prefill_progress: 4,
            tokens_done: text.split_whitespace().count() as u64,
            prompt_fingerprint: 99,
            payload: SnapshotPayload::Text(text.to_string()),
        }
    }

    #[test]
    fn snapshot_then_check() {
        let ctx = ContextManager::new();
        ctx.gen_snapshot(7, sample(7, "the plan"));
        assert!(ctx.check_restore(7));
        assert!(!ctx.check_restore(8));
    }

    #[test]
    fn latest_snapshot_wins() {
        let ctx = ContextManager::new();
        ctx.gen_snapshot(1, sample(1, "first"));
        ctx.gen_snapshot(1, sample(1, "second"));
        let got = ctx.gen_restore(1).unwrap();
        assert_eq!(got.payload, SnapshotPayload::Text("second".into()));
    }

    #[test]
    fn restore_is_non_destructive() {
        let ctx = ContextManager::new();
        ctx.gen_snapshot(3, sample(3, "stay"));
        let a = ctx.gen_restore(3).unwrap();
        let b = ctx.gen_restore(3).unwrap();
        assert_eq!(a.payload, b.payload);
        assert!(ctx.check_restore(3));
    }

    #[test]
    fn restore_absent_is_none() {
        let ctx = ContextManager::new();
        assert!(ctx.gen_restore(42).is_none());
    }

    #[test]
    fn clear_is_idempotent_and_keyed() {
        let ctx = ContextManager::new();
        ctx.clear_restore(5); // absent: no-op
        ctx.gen_snapshot(5, sample(5, "a"));
        ctx.gen_snapshot(6, sample(6, "b"));
        ctx.clear_restore(5);
        assert!(!ctx.check_restore(5));
        assert!(ctx.check_restore(6));
        ctx.clear_restore(5); // again: no-op
    }

    #[test]
    fn concurrent_snapshot_and_clear_lose_no_updates() {
        let ctx = std::sync::Arc::new(ContextManager::new());
        let mut joins = Vec::new();
        for t in 0..8u64 {
            let ctx = std::sync::Arc::clone(&ctx);
            joins.push(std::thread::spawn(move || {
                for i in 0..200u64 {
                    let cid = t * 1000 + i;
                    ctx.gen_snapshot(cid, sample(cid, "x y"));
                    assert!(ctx.check_restore(cid));
                    assert!(ctx.gen_restore(cid).is_some());
                    if i % 2 == 0 {
                        ctx.clear_restore(cid);
                        assert!(!ctx.check_restore(cid));
                    }
                }
            }));
        }
        for j in joins {
            j.join().unwrap();
        }
        // Every odd-numbered snapshot survives, every even one was cleared.
        assert_eq!(ctx.len(), 8 * 100);
    }

    #[test]
    fn invariant_rejects_decode_before_prefill() {
        let snap = DecodeSnapshot {
            cid: 1,
            prefill_progress: 3,
            tokens_done: 2,
            prompt_fingerprint: 0,
            payload: SnapshotPayload::Text("a b".into()),
        };
        assert!(snap.validate(10).is_err());
        assert!(snap.validate(3).is_ok());
    }
}
