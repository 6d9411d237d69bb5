//! Workload generation: deterministic per-(agent, call) plans drawn from a
//! seeded RNG, with controllable prompt sizes, output lengths, and action mix.

use agentsys::llm::GenOverrides;
use agentsys::sdk::{FileOp, Query};
use agentsys::tool::ToolSchema;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Fixed { value: u64 },
    Uniform { lo: u64, hi: u64 },
    Bimodal { short: u64, long: u64, p_long: f64 },
}

impl Distribution {
    pub fn fixed(value: u64) -> Self {
        Distribution::Fixed { value }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            Distribution::Fixed { value } => value,
            Distribution::Uniform { lo, hi } => rng.gen_range(lo..=hi.max(lo)),
            Distribution::Bimodal {
                short,
                long,
                p_long,
            } => {
                if rng.gen_bool(p_long.clamp(0.0, 1.0)) {
                    long
                } else {
                    short
                }
            }
        }
    }
}

/// Fractions of each action type; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMix {
    pub chat: f64,
    pub tool_use: f64,
    pub file_operation: f64,
}

impl Default for ActionMix {
    fn default() -> Self {
        ActionMix {
            chat: 1.0,
            tool_use: 0.0,
            file_operation: 0.0,
        }
    }
}

impl ActionMix {
    pub fn validate(&self) -> Result<(), String> {
        let sum = self.chat + self.tool_use + self.file_operation;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("action mix fractions sum to {sum}, expected 1"));
        }
        if self.chat < 0.0 || self.tool_use < 0.0 || self.file_operation < 0.0 {
            return Err("action mix fractions must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannedAction {
    Chat,
    ToolUse,
    FileWrite,
    FileRead,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub num_agents: usize,
    pub calls_per_agent: usize,
    pub prompt_tokens: Distribution,
    pub output_tokens: Distribution,
    pub mix: ActionMix,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    /// The default acceptance workload: 100 agents by 2 chat calls, 40-token
    /// prompts, bimodal outputs (90% short=20, 10% long=200).
    fn default() -> Self {
        WorkloadSpec {
            num_agents: 100,
            calls_per_agent: 2,
            prompt_tokens: Distribution::fixed(40),
            output_tokens: Distribution::Bimodal {
                short: 20,
                long: 200,
                p_long: 0.1,
            },
            mix: ActionMix::default(),
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        self.mix.validate()
    }

    pub fn with_agents(mut self, n: usize) -> Self {
        self.num_agents = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Materialize the full deterministic call table.
    ///
    /// Bimodal output lengths are stratified: the workload carries exactly
    /// `round(p_long * calls)` long calls at seeded-shuffled positions, so a
    /// "90% short / 10% long" spec is a composition, not a coin flip per call.
    pub fn plan(&self) -> Vec<Vec<CallPlan>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let total_calls = self.num_agents * self.calls_per_agent;
        let stratified: Option<Vec<u64>> = match self.output_tokens {
            Distribution::Bimodal {
                short,
                long,
                p_long,
            } => {
                let n_long = (p_long.clamp(0.0, 1.0) * total_calls as f64).round() as usize;
                let mut lengths = vec![short; total_calls];
                let mut positions: Vec<usize> = (0..total_calls).collect();
                // Fisher-Yates with the workload RNG.
                for i in (1..positions.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    positions.swap(i, j);
                }
                for &p in positions.iter().take(n_long) {
                    lengths[p] = long;
                }
                Some(lengths)
            }
            _ => None,
        };
        let mut agents = Vec::with_capacity(self.num_agents);
        for agent_idx in 0..self.num_agents {
            let mut calls = Vec::with_capacity(self.calls_per_agent);
            let mut file_seq = 0u64;
            for call_idx in 0..self.calls_per_agent {
                let prompt_tokens = self.prompt_tokens.sample(&mut rng).max(3);
                let flat_idx = agent_idx * self.calls_per_agent + call_idx;
                let output_tokens = match &stratified {
                    Some(lengths) => lengths[flat_idx],
                    None => self.output_tokens.sample(&mut rng).max(1),
                };
                let roll: f64 = rng.gen();
                let action = if roll < self.mix.chat {
                    PlannedAction::Chat
                } else if roll < self.mix.chat + self.mix.tool_use {
                    PlannedAction::ToolUse
                } else if file_seq.is_multiple_of(2) {
                    PlannedAction::FileWrite
                } else {
                    PlannedAction::FileRead
                };
                if matches!(action, PlannedAction::FileWrite | PlannedAction::FileRead) {
                    file_seq += 1;
                }
                calls.push(CallPlan {
                    agent_idx,
                    call_idx,
                    action,
                    prompt_tokens,
                    output_tokens,
                });
            }
            agents.push(calls);
        }
        agents
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallPlan {
    pub agent_idx: usize,
    pub call_idx: usize,
    pub action: PlannedAction,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

const FILLER: [&str; 12] = [
    "plan", "route", "check", "detail", "option", "review", "update", "match", "price", "query",
    "note", "list",
];

impl CallPlan {
    /// Prompt content with exactly `prompt_tokens` whitespace words, unique
    /// per (agent, call) so generations differ across calls.
    pub fn prompt_text(&self) -> String {
        let mut words = Vec::with_capacity(self.prompt_tokens as usize);
        words.push(format!("agent{}", self.agent_idx));
        words.push(format!("call{}", self.call_idx));
        let mut i = 0usize;
        while words.len() < self.prompt_tokens as usize {
            words.push(FILLER[i % FILLER.len()].to_string());
            i += 1;
        }
        words.truncate(self.prompt_tokens as usize);
        words.join(" ")
    }

    pub fn query(&self, echo_schema: &ToolSchema) -> Query {
        match self.action {
            PlannedAction::Chat => Query::chat(vec![("user", &self.prompt_text())]),
            PlannedAction::ToolUse => Query::tool_use(
                vec![("user", &self.prompt_text())],
                vec![echo_schema.clone()],
            ),
            PlannedAction::FileWrite => Query::file_operation(&FileOp::Write {
                name: format!("f{}", self.call_idx / 2),
                text: self.prompt_text(),
                owner: None,
            }),
            PlannedAction::FileRead => Query::file_operation(&FileOp::Read {
                name: format!("f{}", self.call_idx / 2),
                owner: None,
            }),
        }
    }

    pub fn overrides(&self) -> GenOverrides {
        GenOverrides {
            forced_decode_tokens: Some(self.output_tokens),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_are_seed_deterministic() {
        let spec = WorkloadSpec::default();
        let a = serde_json::to_string(&spec.plan()).unwrap();
        let b = serde_json::to_string(&spec.plan()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&spec.clone().with_seed(7).plan()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prompt_has_exact_token_count() {
        let spec = WorkloadSpec::default();
        for calls in spec.plan() {
            for plan in calls {
                assert_eq!(
                    plan.prompt_text().split_whitespace().count() as u64,
                    plan.prompt_tokens
                );
            }
        }
    }

    #[test]
    fn bimodal_mix_is_roughly_proportional() {
        let spec = WorkloadSpec {
            num_agents: 200,
            calls_per_agent: 1,
            ..WorkloadSpec::default()
        };
        let longs = spec
            .plan()
            .iter()
            .flatten()
            .filter(|p| p.output_tokens == 200)
            .count();
        assert_eq!(
            longs, 20,
            "stratified bimodal must carry exactly 10% long calls"
        );
    }

    #[test]
    fn mix_fractions_validated() {
        let spec = WorkloadSpec {
            mix: ActionMix {
                chat: 0.5,
                tool_use: 0.2,
                file_operation: 0.2,
            },
            ..WorkloadSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}

#[cfg(test)]
mod distribution_tests {
    use super::*;

    #[test]
    fn uniform_samples_stay_in_bounds() {
        let spec = WorkloadSpec {
            num_agents: 50,
            calls_per_agent: 2,
            prompt_tokens: Distribution::Uniform { lo: 10, hi: 30 },
            output_tokens: Distribution::Uniform { lo: 5, hi: 9 },
            ..WorkloadSpec::default()
        };
        for plan in spec.plan().iter().flatten() {
            assert!((10..=30).contains(&plan.prompt_tokens));
            assert!((5..=9).contains(&plan.output_tokens));
        }
    }
}
