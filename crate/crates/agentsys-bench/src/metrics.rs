//! Model-time metrics: throughput, waiting times, and the linear fit used by
//! the scalability sweep. All inputs are exact model-time stamps.

use agentsys::time::ModelTime;
use serde::Serialize;

/// One agent query, submission to completion.
#[derive(Debug, Clone, Serialize)]
pub struct QueryRecord {
    pub agent_id: u64,
    pub call_idx: usize,
    pub submitted: ModelTime,
    pub finished: ModelTime,
    pub ok: bool,
}

impl QueryRecord {
    pub fn wait(&self) -> ModelTime {
        self.finished - self.submitted
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    /// Makespan: latest completion over all syscalls.
    pub overall_time: f64,
    pub completed_syscalls: u64,
    /// Completed syscalls per model-time unit.
    pub throughput: f64,
    /// Mean query wait, submission to completion, in model units.
    pub wait_avg: f64,
    /// Nearest-rank 90th percentile of query waits, in model units.
    pub wait_p90: f64,
    pub queries_ok: u64,
    pub queries_failed: u64,
}

impl Metrics {
    pub fn compute(
        overall: ModelTime,
        completed_syscalls: u64,
        queries: &[QueryRecord],
    ) -> Metrics {
        let waits: Vec<ModelTime> = queries.iter().map(|q| q.wait()).collect();
        let total_wait_micros: i128 = waits.iter().map(|w| w.as_micros() as i128).sum();
        let wait_avg = if waits.is_empty() {
            0.0
        } else {
            total_wait_micros as f64 / waits.len() as f64 / 1_000_000.0
        };
        let throughput = if overall.is_zero() {
            0.0
        } else {
            completed_syscalls as f64 / overall.as_f64()
        };
        Metrics {
            overall_time: overall.as_f64(),
            completed_syscalls,
            throughput,
            wait_avg,
            wait_p90: percentile_nearest_rank(&waits, 90).as_f64(),
            queries_ok: queries.iter().filter(|q| q.ok).count() as u64,
            queries_failed: queries.iter().filter(|q| !q.ok).count() as u64,
        }
    }
}

/// Nearest-rank percentile: the smallest value with at least p% of the sample
/// at or below it. Exact selection, no interpolation.
pub fn percentile_nearest_rank(values: &[ModelTime], p: u32) -> ModelTime {
    if values.is_empty() {
        return ModelTime::ZERO;
    }
    let mut sorted: Vec<ModelTime> = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p as usize * sorted.len()).div_ceil(100)).max(1);
    sorted[rank - 1]
}

/// Least-squares line fit with the coefficient of determination.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<(f64, f64, f64), String> {
    if points.len() < 2 {
        return Err(format!(
            "linear fit needs at least 2 points, got {}",
            points.len()
        ));
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < f64::EPSILON {
        return Err("degenerate fit: all x values identical".into());
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok((slope, intercept, r2))
}
