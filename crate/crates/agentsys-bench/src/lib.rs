//! Benchmark harness for the agent-serving kernel: workload generation,
//! kernel-mode runs (FIFO/RR), the unscheduled trial-and-error baseline, a
//! scalability sweep, and deterministic report emission.

pub mod baseline;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod workload;

use agentsys::config::KernelConfig;
use serde::Serialize;

pub use baseline::run_baseline_mode;
pub use metrics::{fit_linear, Metrics, QueryRecord};
pub use report::Report;
pub use runner::{run_kernel_mode, Mode, RunOutcome};
pub use workload::{ActionMix, Distribution, WorkloadSpec};

/// Run a workload in any mode.
pub fn run_mode(spec: &WorkloadSpec, cfg: KernelConfig, mode: Mode) -> Result<RunOutcome, String> {
    match mode {
        Mode::Fifo | Mode::Rr => runner::run_kernel_mode(spec, cfg, mode),
        Mode::Baseline => baseline::run_baseline_mode(spec, cfg),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub agents: usize,
    pub overall_time: f64,
    pub wait_avg: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Scalability sweep: run the workload at each agent count (ascending) and
/// least-squares fit overall time against the count.
pub fn sweep_agents(
    spec: &WorkloadSpec,
    cfg: &KernelConfig,
    mode: Mode,
    counts: &[usize],
) -> Result<SweepResult, String> {
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err("sweep counts must be strictly ascending".into());
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let scaled = spec.clone().with_agents(n);
        let outcome = run_mode(&scaled, cfg.clone(), mode)?;
        rows.push(SweepRow {
            agents: n,
            overall_time: outcome.metrics.overall_time,
            wait_avg: outcome.metrics.wait_avg,
            throughput: outcome.metrics.throughput,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.agents as f64, r.overall_time))
        .collect();
    let (slope, intercept, r_squared) = fit_linear(&points)?;
    Ok(SweepResult {
        rows,
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub strategy: &'static str,
    pub overall_time: f64,
    pub wait_avg: f64,
    pub wait_p90: f64,
    pub throughput: f64,
}

/// Run all three modes on one workload: the strategy-impact comparison.
pub fn ablate(spec: &WorkloadSpec, cfg: &KernelConfig) -> Result<Vec<AblationRow>, String> {
    let mut rows = Vec::new();
    for (label, mode) in [
        ("none", Mode::Baseline),
        ("fifo", Mode::Fifo),
        ("rr", Mode::Rr),
    ] {
        let outcome = run_mode(spec, cfg.clone(), mode)?;
        rows.push(AblationRow {
            strategy: label,
            overall_time: outcome.metrics.overall_time,
            wait_avg: outcome.metrics.wait_avg,
            wait_p90: outcome.metrics.wait_p90,
            throughput: outcome.metrics.throughput,
        });
    }
    Ok(rows)
}
