//! Report emission: a JSON document (summary plus per-call and per-query
//! rows) and a CSV with one row per syscall. Output bytes are deterministic
//! for a fixed seed and config: rows are canonically sorted and all values
//! derive from exact model-time stamps.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::metrics::{Metrics, QueryRecord};
use crate::runner::RunOutcome;
use crate::workload::WorkloadSpec;

/// One syscall timeline row. Kernel-internal call ids are allocation-order
/// values from concurrent submitters and are not stable across runs, so rows
/// carry only model-time facts and sort canonically.
#[derive(Serialize, PartialEq, PartialOrd)]
struct CallRow {
    agent_id: u64,
    kind: &'static str,
    created: f64,
    start: Option<f64>,
    end: f64,
    wait: f64,
    failed: bool,
}

#[derive(Serialize)]
struct QueryRow {
    agent_id: u64,
    call_idx: usize,
    submitted: f64,
    finished: f64,
    wait: f64,
    ok: bool,
}

#[derive(Serialize)]
pub struct Report {
    pub mode: &'static str,
    pub seed: u64,
    pub num_agents: usize,
    pub calls_per_agent: usize,
    pub metrics: Metrics,
    calls: Vec<CallRow>,
    queries: Vec<QueryRow>,
}

impl Report {
    pub fn build(spec: &WorkloadSpec, outcome: &RunOutcome) -> Report {
        let mut calls: Vec<CallRow> = outcome
            .calls
            .iter()
            .map(|c| CallRow {
                agent_id: c.agent_id,
                kind: c.queue.as_str(),
                created: c.created.as_f64(),
                start: c.start.map(|s| s.as_f64()),
                end: c.end.as_f64(),
                wait: (c.end - c.created).as_f64(),
                failed: c.failed,
            })
            .collect();
        calls.sort_by(|a, b| {
            (a.created, a.agent_id, a.kind, a.start, a.end)
                .partial_cmp(&(b.created, b.agent_id, b.kind, b.start, b.end))
                .expect("model times are finite")
        });
        let queries = outcome
            .queries
            .iter()
            .map(|q: &QueryRecord| QueryRow {
                agent_id: q.agent_id,
                call_idx: q.call_idx,
                submitted: q.submitted.as_f64(),
                finished: q.finished.as_f64(),
                wait: q.wait().as_f64(),
                ok: q.ok,
            })
            .collect();
        Report {
            mode: outcome.mode.as_str(),
            seed: spec.seed,
            num_agents: spec.num_agents,
            calls_per_agent: spec.calls_per_agent,
            metrics: outcome.metrics.clone(),
            calls,
            queries,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent_id,kind,created,start,end,wait,failed\n");
        for c in &self.calls {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.agent_id,
                c.kind,
                c.created,
                c.start.map_or(String::new(), |s| s.to_string()),
                c.end,
                c.wait,
                c.failed
            ));
        }
        out
    }

    /// Write the JSON and CSV files side by side: `out.json` + `out.csv`
    /// regardless of which extension the caller named.
    pub fn write_files(
        &self,
        path: &Path,
    ) -> std::io::Result<(std::path::PathBuf, std::path::PathBuf)> {
        let json_path = path.with_extension("json");
        let csv_path = path.with_extension("csv");
        let mut jf = std::fs::File::create(&json_path)?;
        jf.write_all(self.to_json().as_bytes())?;
        let mut cf = std::fs::File::create(&csv_path)?;
        cf.write_all(self.to_csv().as_bytes())?;
        Ok((json_path, csv_path))
    }
}
