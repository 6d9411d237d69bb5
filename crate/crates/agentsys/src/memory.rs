//! Memory manager: per-agent bounded blocks of compressed interaction records
//! with K-LRU eviction into the storage manager.
//!
//! Every record is compressed on write. When a write pushes a block over its
//! usage threshold, the K least-recently-accessed records (never the one just
//! written) are evicted to storage, repeating until the block is back under
//! the threshold. Reads of evicted records fall through to storage and are not
//! re-admitted.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use crate::error::{KernelError, Result};
use crate::storage::StorageManager;
use crate::syscall::AgentId;

/// Lossless payload codec. The production codec is DEFLATE (zlib stream);
/// the trait exists so policy tests can pin record sizes exactly.
pub trait Codec: Send + Sync {
    fn compress(&self, payload: &str) -> Vec<u8>;
    fn decompress(&self, raw: &[u8]) -> Result<String>;
}

/// DEFLATE-compatible codec, bit-exact round trip.
pub struct DeflateCodec;

impl Codec for DeflateCodec {
    fn compress(&self, payload: &str) -> Vec<u8> {
        crate::storage::encode_record(payload)
    }

    fn decompress(&self, raw: &[u8]) -> Result<String> {
        crate::storage::decode_record(raw, "<memory block>")
    }
}

/// A memory syscall payload.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MemoryOp {
    Alloc {
        aid: AgentId,
    },
    Read {
        aid: AgentId,
        rid: u64,
    },
    Write {
        aid: AgentId,
        rid: u64,
        payload: String,
    },
    Clear {
        aid: AgentId,
    },
}

#[derive(Debug, Clone)]
pub struct MemoryConfig {
    pub capacity_bytes: usize,
    /// Usable fraction of the block, in micro-units (800_000 == 0.8).
    pub threshold_micros: u64,
    pub eviction_k: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity_bytes: 65536,
            threshold_micros: 800_000,
            eviction_k: 2,
        }
    }
}

impl MemoryConfig {
    /// Byte limit a block may use after any write returns.
    pub fn limit_bytes(&self) -> usize {
        ((self.capacity_bytes as u128 * self.threshold_micros as u128) / 1_000_000) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity_bytes == 0 {
            return Err(KernelError::Config {
                key: "memory.capacity_bytes".into(),
                message: "must be positive".into(),
            });
        }
        if self.threshold_micros == 0 || self.threshold_micros > 1_000_000 {
            return Err(KernelError::Config {
                key: "memory.threshold".into(),
                message: "must be in (0, 1]".into(),
            });
        }
        if self.eviction_k == 0 {
            return Err(KernelError::Config {
                key: "memory.eviction_k".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

struct Record {
    compressed: Vec<u8>,
    last_access: u64,
}

#[derive(Default)]
struct Block {
    records: HashMap<u64, Record>,
    used_bytes: usize,
    clock: u64,
    /// rids evicted to storage and not yet cleared; mem_clear removes their files.
    evicted: HashSet<u64>,
}

impl Block {
    fn touch(&mut self, rid: u64) {
        self.clock += 1;
        let clock = self.clock;
        if let Some(r) = self.records.get_mut(&rid) {
            r.last_access = clock;
        }
    }
}

pub struct MemoryManager {
    cfg: MemoryConfig,
    codec: Arc<dyn Codec>,
    storage: Arc<StorageManager>,
    blocks: Mutex<HashMap<AgentId, Block>>,
}

impl MemoryManager {
    pub fn new(cfg: MemoryConfig, storage: Arc<StorageManager>) -> Result<Self> {
        Self::with_codec(cfg, storage, Arc::new(DeflateCodec))
    }

    pub fn with_codec(
        cfg: MemoryConfig,
        storage: Arc<StorageManager>,
        codec: Arc<dyn Codec>,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(MemoryManager {
            cfg,
            codec,
            storage,
            blocks: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    /// Ensure the agent's block and its storage collection exist. Idempotent.
    pub fn mem_alloc(&self, aid: AgentId) -> Result<()> {
        let mut blocks = self.blocks.lock().unwrap();
        if let std::collections::hash_map::Entry::Vacant(e) = blocks.entry(aid) {
            e.insert(Block::default());
            self.storage.sto_create(&aid.to_string(), None)?;
        }
        Ok(())
    }

    /// Compress and store a record (replace semantics), then evict the K
    /// least-recently-accessed records while the block exceeds its threshold.
    pub fn mem_write(&self, aid: AgentId, rid: u64, payload: &str) -> Result<()> {
        self.mem_alloc(aid)?;
        let compressed = self.codec.compress(payload);
        let limit = self.cfg.limit_bytes();
        if compressed.len() > limit {
            return Err(KernelError::OversizeRecord {
                size: compressed.len(),
                limit,
            });
        }

        // Decide evictions under the block lock, then write them to storage
        // outside it (storage has its own lock; holding both invites cycles).
        let evictions: Vec<(u64, String)> = {
            let mut blocks = self.blocks.lock().unwrap();
            let block = blocks.get_mut(&aid).expect("allocated above");
            if let Some(old) = block.records.remove(&rid) {
                block.used_bytes -= old.compressed.len();
            }
            block.used_bytes += compressed.len();
            block.clock += 1;
            block.records.insert(
                rid,
                Record {
                    compressed,
                    last_access: block.clock,
                },
            );

            let mut out = Vec::new();
            while block.used_bytes > limit {
                let mut victims: Vec<(u64, u64)> = block
                    .records
                    .iter()
                    .filter(|(r, _)| **r != rid)
                    .map(|(r, rec)| (rec.last_access, *r))
                    .collect();
                if victims.is_empty() {
                    break;
                }
                victims.sort_unstable();
                for &(_, victim) in victims.iter().take(self.cfg.eviction_k) {
                    let rec = block.records.remove(&victim).expect("victim present");
                    block.used_bytes -= rec.compressed.len();
                    block.evicted.insert(victim);
                    out.push((victim, self.codec.decompress(&rec.compressed)?));
                }
            }
            out
        };

        for (victim, payload) in evictions {
            self.storage
                .sto_write(&aid.to_string(), &payload, Some((aid, victim)))?;
        }
        Ok(())
    }

    /// Read a record: resident records are decompressed and marked
    /// most-recent; evicted records are served from storage without
    /// re-admission.
    pub fn mem_read(&self, aid: AgentId, rid: u64) -> Result<String> {
        {
            let mut blocks = self.blocks.lock().unwrap();
            if let Some(block) = blocks.get_mut(&aid) {
                if let Some(rec) = block.records.get(&rid) {
                    let payload = self.codec.decompress(&rec.compressed)?;
                    block.touch(rid);
                    return Ok(payload);
                }
            }
        }
        match self.storage.sto_read(&aid.to_string(), Some((aid, rid)))? {
            Some(payload) => Ok(payload),
            None => Err(KernelError::NotFound(format!(
                "memory record {rid} of agent {aid}"
            ))),
        }
    }

    /// Drop the agent's block and its storage records. No-op for unknown aids.
    pub fn mem_clear(&self, aid: AgentId) -> Result<()> {
        let evicted: Option<Vec<u64>> = {
            let mut blocks = self.blocks.lock().unwrap();
            blocks.remove(&aid).map(|b| b.evicted.into_iter().collect())
        };
        if let Some(evicted) = evicted {
            for rid in evicted {
                self.storage.sto_clear(&aid.to_string(), Some((aid, rid)))?;
            }
            self.storage.sto_clear(&aid.to_string(), None)?;
        }
        Ok(())
    }

    pub fn used_bytes(&self, aid: AgentId) -> usize {
        self.blocks
            .lock()
            .unwrap()
            .get(&aid)
            .map_or(0, |b| b.used_bytes)
    }

    pub fn resident_rids(&self, aid: AgentId) -> Vec<u64> {
        let blocks = self.blocks.lock().unwrap();
        let mut rids: Vec<u64> = blocks
            .get(&aid)
            .map(|b| b.records.keys().copied().collect())
            .unwrap_or_default();
        rids.sort_unstable();
        rids
    }

    pub fn has_block(&self, aid: AgentId) -> bool {
        self.blocks.lock().unwrap().contains_key(&aid)
    }

    /// Execute a memory syscall payload; `Ok` payload is the textual result.
    pub fn execute(&self, op: &MemoryOp) -> Result<Option<String>> {
        match op {
            MemoryOp::Alloc { aid } => {
                self.mem_alloc(*aid)?;
                Ok(None)
            }
            MemoryOp::Read { aid, rid } => self.mem_read(*aid, *rid).map(Some),
            MemoryOp::Write { aid, rid, payload } => {
                self.mem_write(*aid, *rid, payload)?;
                Ok(None)
            }
            MemoryOp::Clear { aid } => {
                self.mem_clear(*aid)?;
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Identity codec: compressed size == payload size, so eviction traces can
    /// be hand-computed against fixed record sizes.
    struct IdentityCodec;

    impl Codec for IdentityCodec {
        fn compress(&self, payload: &str) -> Vec<u8> {
            payload.as_bytes().to_vec()
        }
        fn decompress(&self, raw: &[u8]) -> Result<String> {
            Ok(String::from_utf8(raw.to_vec()).unwrap())
        }
    }

    fn fixed_manager(capacity: usize) -> (tempfile::TempDir, MemoryManager) {
        let dir = tempfile::tempdir().unwrap();
        let storage = Arc::new(StorageManager::open(dir.path()).unwrap());
        let mm = MemoryManager::with_codec(
            MemoryConfig {
                capacity_bytes: capacity,
                threshold_micros: 800_000,
                eviction_k: 2,
            },
            storage,
            Arc::new(IdentityCodec),
        )
        .unwrap();
        (dir, mm)
    }

    fn deflate_manager() -> (tempfile::TempDir, MemoryManager, Arc<StorageManager>) {
        let dir = tempfile::tempdir().unwrap();
        let storage = Arc::new(StorageManager::open(dir.path()).unwrap());
        let mm = MemoryManager::new(MemoryConfig::default(), Arc::clone(&storage)).unwrap();
        (dir, mm, storage)
    }

    #[test]
    fn alloc_is_idempotent_and_creates_collection() {
        let (_dir, mm, storage) = deflate_manager();
        mm.mem_alloc(9).unwrap();
        mm.mem_alloc(9).unwrap();
        assert_eq!(mm.used_bytes(9), 0);
        assert!(storage.collection_exists("9", None));
    }

    #[test]
    fn write_then_read_round_trips() {
        let (_dir, mm, _s) = deflate_manager();
        mm.mem_write(1, 10, "the agent spoke with the user about flights")
            .unwrap();
        assert_eq!(
            mm.mem_read(1, 10).unwrap(),
            "the agent spoke with the user about flights"
        );
    }

    #[test]
    fn eviction_hand_trace_with_fixed_sizes() {
        // capacity 1000, threshold 0.8 => limit 800; records of exactly 200
        // bytes; K=2. r1..r4 fit (800 == limit, not over); writing r5 pushes
        // usage to 1000 > 800, evicting r1 and r2: the block keeps {r3,r4,r5}.
        let (_dir, mm) = fixed_manager(1000);
        let payload = "x".repeat(200);
        for rid in 1..=4u64 {
            mm.mem_write(7, rid, &payload).unwrap();
        }
        assert_eq!(mm.used_bytes(7), 800);
        assert_eq!(mm.resident_rids(7), vec![1, 2, 3, 4]);

        mm.mem_write(7, 5, &payload).unwrap();
        assert_eq!(mm.resident_rids(7), vec![3, 4, 5]);
        assert_eq!(mm.used_bytes(7), 600);
    }

    #[test]
    fn recency_counts_reads_too() {
        let (_dir, mm) = fixed_manager(1000);
        let payload = "y".repeat(200);
        for rid in 1..=4u64 {
            mm.mem_write(3, rid, &payload).unwrap();
        }
        // Touch r1 and r2 by reading; the LRU victims become r3 and r4.
        mm.mem_read(3, 1).unwrap();
        mm.mem_read(3, 2).unwrap();
        mm.mem_write(3, 5, &payload).unwrap();
        assert_eq!(mm.resident_rids(3), vec![1, 2, 5]);
    }

    #[test]
    fn rewrite_accounts_only_new_size() {
        let (_dir, mm) = fixed_manager(10_000);
        mm.mem_write(1, 1, &"a".repeat(500)).unwrap();
        assert_eq!(mm.used_bytes(1), 500);
        mm.mem_write(1, 1, &"b".repeat(120)).unwrap();
        assert_eq!(mm.used_bytes(1), 120);
    }

    #[test]
    fn evicted_record_served_from_storage_without_readmission() {
        let (_dir, mm) = fixed_manager(1000);
        let mk = |tag: u8| String::from_utf8(vec![b'a' + tag; 200]).unwrap();
        for rid in 1..=5u64 {
            mm.mem_write(2, rid, &mk(rid as u8)).unwrap();
        }
        // r1, r2 evicted.
        assert_eq!(mm.resident_rids(2), vec![3, 4, 5]);
        assert_eq!(mm.mem_read(2, 1).unwrap(), mk(1));
        assert_eq!(
            mm.resident_rids(2),
            vec![3, 4, 5],
            "read-through must not re-admit"
        );
    }

    #[test]
    fn unknown_record_is_not_found() {
        let (_dir, mm, _s) = deflate_manager();
        mm.mem_alloc(1).unwrap();
        assert!(matches!(
            mm.mem_read(1, 404).unwrap_err(),
            KernelError::NotFound(_)
        ));
    }

    #[test]
    fn oversize_record_is_rejected() {
        let (_dir, mm) = fixed_manager(1000);
        let err = mm.mem_write(1, 1, &"z".repeat(801)).unwrap_err();
        assert!(matches!(err, KernelError::OversizeRecord { .. }));
        assert_eq!(mm.used_bytes(1), 0);
    }

    #[test]
    fn clear_removes_both_tiers_and_spares_other_agents() {
        let (_dir, mm) = fixed_manager(1000);
        let payload = "m".repeat(200);
        for rid in 1..=5u64 {
            mm.mem_write(1, rid, &payload).unwrap();
        }
        mm.mem_write(2, 1, &payload).unwrap();
        mm.mem_clear(1).unwrap();
        assert!(!mm.has_block(1));
        assert!(matches!(mm.mem_read(1, 1), Err(KernelError::NotFound(_))));
        assert!(matches!(mm.mem_read(1, 3), Err(KernelError::NotFound(_))));
        assert_eq!(mm.mem_read(2, 1).unwrap(), payload);
        mm.mem_clear(42).unwrap(); // unknown agent: no-op
    }

    #[test]
    fn threshold_postcondition_holds_after_every_write() {
        let (_dir, mm) = fixed_manager(1000);
        let limit = mm.config().limit_bytes();
        for rid in 0..40u64 {
            let size = 50 + (rid as usize * 37) % 300;
            mm.mem_write(5, rid, &"q".repeat(size)).unwrap();
            assert!(
                mm.used_bytes(5) <= limit,
                "write {rid} left block over threshold"
            );
        }
    }

    #[test]
    fn deflate_round_trips_non_ascii_and_empty() {
        let (_dir, mm, _s) = deflate_manager();
        for payload in ["", "héllo wörld — ünïcode ✓", "line\nbreaks\tand\0nul"] {
            mm.mem_write(1, 1, payload).unwrap();
            assert_eq!(mm.mem_read(1, 1).unwrap(), payload);
        }
    }
}
