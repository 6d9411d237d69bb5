//! Storage manager: persistent records (one file per record) plus a
//! per-collection vector index for semantic retrieval.
//!
//! Record files are DEFLATE-compressed (zlib stream) over a length-prefixed
//! UTF-8 payload: 4-byte little-endian byte length, then the bytes. The index
//! is rebuilt from record files at startup, never persisted separately.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use flate2::write::ZlibEncoder;
use flate2::Compression;

use crate::error::{KernelError, Result};

pub const EMBED_DIM: usize = 256;

/// A storage syscall payload.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StorageOp {
    Create {
        aname: String,
        ids: Option<(u64, u64)>,
    },
    Read {
        aname: String,
        ids: Option<(u64, u64)>,
    },
    Write {
        aname: String,
        payload: String,
        ids: Option<(u64, u64)>,
    },
    Retrieve {
        aname: String,
        query: String,
        k: usize,
        ids: Option<(u64, u64)>,
    },
    Clear {
        aname: String,
        ids: Option<(u64, u64)>,
    },
}

/// Record key: `{aid}_{rid}` when both ids are given, else the agent name.
pub fn record_key(aname: &str, ids: Option<(u64, u64)>) -> String {
    match ids {
        Some((aid, rid)) => format!("{aid}_{rid}"),
        None => aname.to_string(),
    }
}

/// Deterministic text embedding: hashed bag of lowercase whitespace tokens
/// into 256 buckets, L2-normalized.
pub fn embed(text: &str) -> Vec<f32> {
    let mut v = vec![0.0f32; EMBED_DIM];
    for token in text.to_lowercase().split_whitespace() {
        let bucket = (crate::llm::prf::fnv1a(token.as_bytes()) % EMBED_DIM as u64) as usize;
        v[bucket] += 1.0;
    }
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64) * (*y as f64))
        .sum()
}

/// Compress a payload into the on-disk record format.
pub fn encode_record(payload: &str) -> Vec<u8> {
    let bytes = payload.as_bytes();
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&(bytes.len() as u32).to_le_bytes())
        .expect("vec write");
    enc.write_all(bytes).expect("vec write");
    enc.finish().expect("vec finish")
}

/// Strict zlib inflate: the stream must reach its end marker (including a
/// valid checksum) and consume the whole input. Read-style decoders accept
/// truncated tails silently, which would turn corruption into data loss.
fn inflate_strict(raw: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let mut d = flate2::Decompress::new(true);
    let mut out: Vec<u8> = Vec::with_capacity(raw.len().max(64) * 2);
    loop {
        if out.len() == out.capacity() {
            out.reserve(out.capacity().max(64));
        }
        let consumed = d.total_in() as usize;
        let before_out = d.total_out();
        let status = d
            .decompress_vec(&raw[consumed..], &mut out, flate2::FlushDecompress::None)
            .map_err(|e| e.to_string())?;
        match status {
            flate2::Status::StreamEnd => break,
            flate2::Status::Ok | flate2::Status::BufError => {
                let stalled = d.total_in() as usize == consumed
                    && d.total_out() == before_out
                    && out.len() < out.capacity();
                if stalled {
                    return Err("truncated deflate stream".into());
                }
            }
        }
    }
    if (d.total_in() as usize) < raw.len() {
        return Err("trailing bytes after deflate stream".into());
    }
    Ok(out)
}

/// Inverse of [`encode_record`]; any framing violation is a corruption error.
pub fn decode_record(raw: &[u8], origin: &str) -> Result<String> {
    let corrupt = |detail: &str| KernelError::Corrupt {
        path: origin.to_string(),
        detail: detail.to_string(),
    };
    let buf = inflate_strict(raw).map_err(|e| corrupt(&format!("deflate stream: {e}")))?;
    if buf.len() < 4 {
        return Err(corrupt("missing length prefix"));
    }
    let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if buf.len() - 4 != len {
        return Err(corrupt(&format!(
            "length prefix {len} != payload size {}",
            buf.len() - 4
        )));
    }
    String::from_utf8(buf[4..].to_vec()).map_err(|e| corrupt(&format!("utf8: {e}")))
}

struct IndexEntry {
    text: String,
    vector: Vec<f32>,
}

pub struct StorageManager {
    root: PathBuf,
    collections: Mutex<HashMap<String, Vec<IndexEntry>>>,
}

impl StorageManager {
    /// Open a storage root, rebuilding the vector index from record files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let mut collections: HashMap<String, Vec<IndexEntry>> = HashMap::new();
        let mut names: Vec<PathBuf> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("dat"))
            .collect();
        names.sort();
        for path in names {
            let key = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let raw = std::fs::read(&path)?;
            let entries = if raw.is_empty() {
                Vec::new()
            } else {
                let text = decode_record(&raw, &path.display().to_string())?;
                let vector = embed(&text);
                vec![IndexEntry { text, vector }]
            };
            collections.insert(key, entries);
        }
        Ok(StorageManager {
            root,
            collections: Mutex::new(collections),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file_path(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.dat"))
    }

    /// Create an empty record file and its collection. Idempotent.
    pub fn sto_create(&self, aname: &str, ids: Option<(u64, u64)>) -> Result<()> {
        let key = record_key(aname, ids);
        let mut cols = self.collections.lock().unwrap();
        let path = self.file_path(&key);
        if !path.exists() {
            std::fs::write(&path, b"")?;
        }
        cols.entry(key).or_default();
        Ok(())
    }

    /// Replace the record's content and append (text, embedding) to its
    /// collection. Auto-creates.
    pub fn sto_write(&self, aname: &str, payload: &str, ids: Option<(u64, u64)>) -> Result<()> {
        let key = record_key(aname, ids);
        let mut cols = self.collections.lock().unwrap();
        std::fs::write(self.file_path(&key), encode_record(payload))?;
        cols.entry(key).or_default().push(IndexEntry {
            text: payload.to_string(),
            vector: embed(payload),
        });
        Ok(())
    }

    /// Read a record back, or `None` when it does not exist (an empty created
    /// file also reads as absent). Framing violations are corruption errors.
    pub fn sto_read(&self, aname: &str, ids: Option<(u64, u64)>) -> Result<Option<String>> {
        let key = record_key(aname, ids);
        let _cols = self.collections.lock().unwrap();
        let path = self.file_path(&key);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read(&path)?;
        if raw.is_empty() {
            return Ok(None);
        }
        decode_record(&raw, &path.display().to_string()).map(Some)
    }

    /// Top-k stored texts of the collection by cosine similarity to the query;
    /// ties break by insertion order.
    pub fn sto_retrieve(
        &self,
        aname: &str,
        query: &str,
        k: usize,
        ids: Option<(u64, u64)>,
    ) -> Result<Vec<String>> {
        let key = record_key(aname, ids);
        let cols = self.collections.lock().unwrap();
        let entries = cols
            .get(&key)
            .ok_or_else(|| KernelError::NotFound(format!("collection `{key}`")))?;
        let qv = embed(query);
        let mut scored: Vec<(f64, usize)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine(&qv, &e.vector), i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(_, i)| entries[i].text.clone())
            .collect())
    }

    /// Delete the record file and drop the collection. Idempotent.
    pub fn sto_clear(&self, aname: &str, ids: Option<(u64, u64)>) -> Result<()> {
        let key = record_key(aname, ids);
        let mut cols = self.collections.lock().unwrap();
        let path = self.file_path(&key);
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        cols.remove(&key);
        Ok(())
    }

    pub fn collection_exists(&self, aname: &str, ids: Option<(u64, u64)>) -> bool {
        self.collections
            .lock()
            .unwrap()
            .contains_key(&record_key(aname, ids))
    }

    pub fn collection_len(&self, aname: &str, ids: Option<(u64, u64)>) -> Option<usize> {
        self.collections
            .lock()
            .unwrap()
            .get(&record_key(aname, ids))
            .map(|v| v.len())
    }

    /// Execute a storage syscall payload; `Ok` payload is the textual result.
    pub fn execute(&self, op: &StorageOp) -> Result<Option<String>> {
        match op {
            StorageOp::Create { aname, ids } => {
                self.sto_create(aname, *ids)?;
                Ok(None)
            }
            StorageOp::Read { aname, ids } => self.sto_read(aname, *ids),
            StorageOp::Write {
                aname,
                payload,
                ids,
            } => {
                self.sto_write(aname, payload, *ids)?;
                Ok(None)
            }
            StorageOp::Retrieve {
                aname,
                query,
                k,
                ids,
            } => {
                let hits = self.sto_retrieve(aname, query, *k, *ids)?;
                Ok(Some(hits.join("\n")))
            }
            StorageOp::Clear { aname, ids } => {
                self.sto_clear(aname, *ids)?;
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap as Map;

    fn fresh() -> (tempfile::TempDir, StorageManager) {
        let dir = tempfile::tempdir().unwrap();
        let sm = StorageManager::open(dir.path()).unwrap();
        (dir, sm)
    }

    #[test]
    fn create_is_idempotent_and_names_files_by_agent() {
        let (dir, sm) = fresh();
        sm.sto_create("travel_agent", None).unwrap();
        sm.sto_create("travel_agent", None).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        assert!(dir.path().join("travel_agent.dat").exists());
    }

    #[test]
    fn id_records_use_aid_rid_naming() {
        let (dir, sm) = fresh();
        sm.sto_create("ignored", Some((3, 7))).unwrap();
        assert!(dir.path().join("3_7.dat").exists());
        assert!(sm.collection_exists("ignored", Some((3, 7))));
    }

    #[test]
    fn write_read_round_trip_and_replace() {
        let (_dir, sm) = fresh();
        sm.sto_write("a", "first value", None).unwrap();
        assert_eq!(
            sm.sto_read("a", None).unwrap().as_deref(),
            Some("first value")
        );
        sm.sto_write("a", "second value", None).unwrap();
        assert_eq!(
            sm.sto_read("a", None).unwrap().as_deref(),
            Some("second value")
        );
        assert_eq!(sm.collection_len("a", None), Some(2));
    }

    #[test]
    fn absent_reads_as_none_created_empty_reads_as_none() {
        let (_dir, sm) = fresh();
        assert!(sm.sto_read("ghost", None).unwrap().is_none());
        sm.sto_create("empty", None).unwrap();
        assert!(sm.sto_read("empty", None).unwrap().is_none());
    }

    #[test]
    fn truncated_file_is_corruption_not_absence() {
        let (dir, sm) = fresh();
        sm.sto_write("t", "some payload to damage", None).unwrap();
        let path = dir.path().join("t.dat");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = sm.sto_read("t", None).unwrap_err();
        assert!(matches!(err, KernelError::Corrupt { .. }));
    }

    /// Independent oracle: exact bag-of-words cosine without bucket hashing.
    /// Matches the bucketed embedding whenever tokens do not collide.
    fn bag_cosine(a: &str, b: &str) -> f64 {
        let count = |s: &str| {
            let mut m: Map<String, f64> = Map::new();
            for t in s.to_lowercase().split_whitespace() {
                *m.entry(t.to_string()).or_default() += 1.0;
            }
            m
        };
        let (ma, mb) = (count(a), count(b));
        let dot: f64 = ma
            .iter()
            .filter_map(|(k, v)| mb.get(k).map(|w| v * w))
            .sum();
        let na: f64 = ma.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = mb.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    #[test]
    fn retrieve_ranks_by_cosine_with_oracle_agreement() {
        let (_dir, sm) = fresh();
        let texts = ["book a flight", "reserve hotel", "pay invoice"];
        sm.sto_create("col", None).unwrap();
        for t in texts {
            sm.sto_write("col", t, None).unwrap();
        }
        let query = "flight booking";
        let hits = sm.sto_retrieve("col", query, 3, None).unwrap();
        assert_eq!(hits[0], "book a flight");

        let oracle_best = texts
            .iter()
            .max_by(|a, b| {
                bag_cosine(query, a)
                    .partial_cmp(&bag_cosine(query, b))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(&hits[0], oracle_best);
    }

    #[test]
    fn retrieve_self_similarity_ranks_first() {
        let (_dir, sm) = fresh();
        for t in ["alpha beta", "gamma delta", "epsilon zeta"] {
            sm.sto_write("c", t, None).unwrap();
        }
        let hits = sm.sto_retrieve("c", "gamma delta", 1, None).unwrap();
        assert_eq!(hits[0], "gamma delta");
    }

    #[test]
    fn retrieve_with_large_k_returns_everything_ranked() {
        let (_dir, sm) = fresh();
        for t in ["one", "two", "three"] {
            sm.sto_write("c", t, None).unwrap();
        }
        let hits = sm.sto_retrieve("c", "two", 10, None).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0], "two");
    }

    #[test]
    fn retrieve_missing_collection_is_not_found() {
        let (_dir, sm) = fresh();
        let err = sm.sto_retrieve("nope", "q", 3, None).unwrap_err();
        assert!(matches!(err, KernelError::NotFound(_)));
    }

    #[test]
    fn clear_is_idempotent_and_scoped() {
        let (dir, sm) = fresh();
        sm.sto_clear("ghost", None).unwrap(); // absent: no-op
        sm.sto_write("a", "data", None).unwrap();
        sm.sto_write("b", "other", None).unwrap();
        sm.sto_clear("a", None).unwrap();
        assert!(sm.sto_read("a", None).unwrap().is_none());
        assert!(!dir.path().join("a.dat").exists());
        assert!(sm.collection_exists("b", None));
        assert_eq!(sm.sto_read("b", None).unwrap().as_deref(), Some("other"));
    }

    #[test]
    fn reopen_rebuilds_index_and_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let sm = StorageManager::open(dir.path()).unwrap();
            sm.sto_write("persist", "payload survives restarts", None)
                .unwrap();
        }
        let sm = StorageManager::open(dir.path()).unwrap();
        assert_eq!(
            sm.sto_read("persist", None).unwrap().as_deref(),
            Some("payload survives restarts")
        );
        let hits = sm
            .sto_retrieve("persist", "payload survives restarts", 1, None)
            .unwrap();
        assert_eq!(hits[0], "payload survives restarts");
    }

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let a = embed("Book A Flight");
        let b = embed("book a flight");
        assert_eq!(a, b);
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(embed(""), vec![0.0; EMBED_DIM]);
    }
}
