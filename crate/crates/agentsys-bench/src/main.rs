//! `bench`: run concurrent-agent workloads against the kernel (FIFO/RR) or
//! the unscheduled trial-and-error baseline, sweep agent counts, and compare
//! strategies. All timing is deterministic model time.

use std::path::PathBuf;

use agentsys::config::KernelConfig;
use agentsys_bench::{ablate, run_mode, sweep_agents, Distribution, Mode, Report, WorkloadSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Model-time benchmark harness for the agent-serving kernel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Kernel config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of concurrent agents.
    #[arg(long, default_value_t = 100)]
    agents: usize,
    /// Sequential queries per agent.
    #[arg(long = "calls-per-agent", default_value_t = 2)]
    calls_per_agent: usize,
    /// Prompt length in tokens.
    #[arg(long = "prompt-tokens", default_value_t = 40)]
    prompt_tokens: u64,
    /// Workload and core seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of tool_use queries (the rest is chat).
    #[arg(long = "tool-fraction", default_value_t = 0.0)]
    tool_fraction: f64,
    /// Fraction of file_operation queries.
    #[arg(long = "file-fraction", default_value_t = 0.0)]
    file_fraction: f64,
    /// Round-robin time slice in decode tokens (overrides config).
    #[arg(long)]
    slice: Option<u64>,
}

impl WorkloadArgs {
    fn load(&self) -> Result<(WorkloadSpec, KernelConfig), String> {
        let mut cfg = match &self.config {
            Some(path) => KernelConfig::from_file(path).map_err(|e| e.to_string())?,
            None => KernelConfig::default(),
        };
        cfg.core.sim.seed = self.seed;
        if let Some(slice) = self.slice {
            cfg.scheduler.time_slice = slice;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        let mix = agentsys_bench::ActionMix {
            chat: 1.0 - self.tool_fraction - self.file_fraction,
            tool_use: self.tool_fraction,
            file_operation: self.file_fraction,
        };
        let spec = WorkloadSpec {
            num_agents: self.agents,
            calls_per_agent: self.calls_per_agent,
            prompt_tokens: Distribution::fixed(self.prompt_tokens),
            mix,
            seed: self.seed,
            ..WorkloadSpec::default()
        };
        spec.validate()?;
        Ok((spec, cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload in one mode and print (or write) the report.
    Run {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// fifo, rr, or baseline.
        #[arg(long, default_value = "fifo")]
        mode: String,
        /// Write out.json and out.csv next to each other.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Scalability sweep over agent counts with a linear fit.
    Sweep {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Comma-separated ascending agent counts.
        #[arg(long, default_value = "25,50,100,200")]
        counts: String,
        #[arg(long, default_value = "fifo")]
        mode: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run baseline, FIFO, and RR on one workload and print the comparison.
    Ablate {
        #[command(flatten)]
        workload: WorkloadArgs,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("bench: {e}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<(), String> {
    match Cli::parse().command {
        Command::Run {
            workload,
            mode,
            report,
        } => {
            let (spec, cfg) = workload.load()?;
            let mode = Mode::parse(&mode)?;
            let outcome = run_mode(&spec, cfg, mode)?;
            let rep = Report::build(&spec, &outcome);
            match report {
                Some(path) => {
                    let (json, csv) = rep.write_files(&path).map_err(|e| e.to_string())?;
                    eprintln!("wrote {} and {}", json.display(), csv.display());
                    println!(
                        "{} agents={} seed={} overall={} wait_avg={:.3} wait_p90={} throughput={:.6}",
                        mode.as_str(),
                        spec.num_agents,
                        spec.seed,
                        outcome.metrics.overall_time,
                        outcome.metrics.wait_avg,
                        outcome.metrics.wait_p90,
                        outcome.metrics.throughput,
                    );
                }
                None => println!("{}", rep.to_json()),
            }
            Ok(())
        }
        Command::Sweep {
            workload,
            counts,
            mode,
            report,
        } => {
            let (spec, cfg) = workload.load()?;
            let mode = Mode::parse(&mode)?;
            let counts: Vec<usize> = counts
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse()
                        .map_err(|e| format!("bad count `{c}`: {e}"))
                })
                .collect::<Result<_, _>>()?;
            let result = sweep_agents(&spec, &cfg, mode, &counts)?;
            println!("agents,overall_time,wait_avg,throughput");
            for row in &result.rows {
                println!(
                    "{},{},{:.3},{:.6}",
                    row.agents, row.overall_time, row.wait_avg, row.throughput
                );
            }
            println!(
                "fit: overall_time = {:.4} * N + {:.4}   (R^2 = {:.6})",
                result.slope, result.intercept, result.r_squared
            );
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?;
                std::fs::write(path.with_extension("json"), text).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::Ablate { workload } => {
            let (spec, cfg) = workload.load()?;
            let rows = ablate(&spec, &cfg)?;
            println!(
                "{:<10} {:>18} {:>12} {:>12} {:>12}",
                "strategy", "overall_time", "wait_avg", "wait_p90", "throughput"
            );
            for r in &rows {
                println!(
                    "{:<10} {:>18.3} {:>12.3} {:>12.3} {:>12.6}",
                    r.strategy, r.overall_time, r.wait_avg, r.wait_p90, r.throughput
                );
            }
            let base = rows[0].overall_time;
            let fifo = rows[1].overall_time;
            if fifo > 0.0 {
                println!("speedup of fifo over baseline: {:.3}x", base / fifo);
            }
            Ok(())
        }
    }
}
