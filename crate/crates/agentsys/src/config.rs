//! Kernel configuration: a flat key-value document (TOML) covering every
//! module's tunables. Costs are parsed onto the exact micro-unit grid; bad
//! values produce errors naming the offending key.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::access::{AccessConfig, NonInteractivePolicy};
use crate::context::SnapshotMode;
use crate::error::{KernelError, Result};
use crate::llm::{CoreConfig, CoreKind};
use crate::memory::MemoryConfig;
use crate::sched::{SchedulerConfig, Strategy};
use crate::time::ModelTime;
use crate::tool::{MockBehavior, ParamSpec, ToolRegistration, ToolSchema};

/// A model-time cost in config: accepts a number (`0.2`) or a string
/// (`"0.2"`), both mapped exactly onto the micro-unit grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostValue(pub ModelTime);

impl<'de> Deserialize<'de> for CostValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let mt = match Raw::deserialize(d)? {
            Raw::Int(v) if v >= 0 => Ok(ModelTime::from_units(v)),
            Raw::Int(v) => Err(format!("cost must be non-negative, got {v}")),
            Raw::Float(v) => ModelTime::from_config_number(v),
            Raw::Text(s) => ModelTime::parse_decimal(&s),
        };
        mt.map(CostValue).map_err(serde::de::Error::custom)
    }
}

impl Serialize for CostValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0.as_f64())
    }
}

/// How the baseline's retry delay grows with consecutive failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackoffPolicy {
    Fixed,
    Linear,
    Exponential,
}

impl BackoffPolicy {
    /// Delay before retry number `attempts` (1-based), on top of the wasted
    /// prefill work.
    pub fn delay(self, base: ModelTime, attempts: u64) -> ModelTime {
        match self {
            BackoffPolicy::Fixed => base,
            BackoffPolicy::Linear => base.per_tokens(attempts),
            BackoffPolicy::Exponential => {
                ModelTime::from_micros(base.as_micros() << (attempts - 1).min(20))
            }
        }
    }
}

fn config_err(key: &str, message: impl ToString) -> KernelError {
    KernelError::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub strategy: String,
    pub time_slice: u64,
    pub max_concurrent_agents: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            strategy: "fifo".into(),
            time_slice: 16,
            max_concurrent_agents: 250,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub slots: usize,
    pub prefill_cost_per_token: CostValue,
    pub decode_cost_per_token: CostValue,
    pub max_new_tokens: u64,
    pub beam_width: u64,
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            slots: 1,
            prefill_cost_per_token: CostValue(ModelTime::from_micros(200_000)),
            decode_cost_per_token: CostValue(ModelTime::from_units(1)),
            max_new_tokens: 256,
            beam_width: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreSection {
    pub kind: String,
    pub failed_attempt_waste: f64,
    pub sim: SimSection,
    pub http: Option<crate::llm::http::HttpCoreConfig>,
}

impl Default for CoreSection {
    fn default() -> Self {
        CoreSection {
            kind: "simulated".into(),
            failed_attempt_waste: 1.0,
            sim: SimSection::default(),
            http: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub mode: String,
}

impl Default for ContextSection {
    fn default() -> Self {
        ContextSection {
            mode: "text".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub capacity_bytes: usize,
    pub threshold: f64,
    pub eviction_k: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            capacity_bytes: 65536,
            threshold: 0.8,
            eviction_k: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSection {
    pub root: String,
}

impl Default for StorageSection {
    fn default() -> Self {
        StorageSection {
            root: "agentsys_storage".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccessSection {
    pub irreversible_ops: Vec<String>,
    pub noninteractive_default: String,
}

impl Default for AccessSection {
    fn default() -> Self {
        let d = AccessConfig::default();
        AccessSection {
            irreversible_ops: d.irreversible_ops,
            noninteractive_default: "deny".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdkSection {
    pub tool_followup: bool,
}

impl Default for SdkSection {
    fn default() -> Self {
        SdkSection {
            tool_followup: true,
        }
    }
}

/// Retry behavior of the unscheduled (trial-and-error) baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub retry_backoff: CostValue,
    /// 0 means unlimited retries.
    pub retry_limit: u64,
    /// "linear" (base times consecutive failures), "exponential"
    /// (doubling, capped), or "fixed".
    pub backoff: String,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            retry_backoff: CostValue(ModelTime::from_units(1)),
            retry_limit: 0,
            backoff: "linear".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSection {
    pub name: String,
    #[serde(default = "one")]
    pub max_parallel: usize,
    #[serde(default = "zero_cost")]
    pub cost: CostValue,
    pub behavior: MockBehavior,
    #[serde(default)]
    pub params: BTreeMap<String, ParamSpec>,
}

fn one() -> usize {
    1
}

fn zero_cost() -> CostValue {
    CostValue(ModelTime::ZERO)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub scheduler: SchedulerSection,
    pub core: CoreSection,
    pub context: ContextSection,
    pub memory: MemorySection,
    pub storage: StorageSection,
    pub access: AccessSection,
    pub sdk: SdkSection,
    /// Tool registry; when empty the built-in mock suite is registered.
    pub tools: Vec<ToolSection>,
    pub baseline: BaselineSection,
}

impl KernelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err("<config>", e))
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_toml_str(&text)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        match self.scheduler.strategy.as_str() {
            "fifo" => Ok(Strategy::Fifo),
            "rr" => Ok(Strategy::Rr),
            other => Err(config_err(
                "scheduler.strategy",
                format!("unknown strategy `{other}` (expected fifo or rr)"),
            )),
        }
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            strategy: self.strategy().unwrap_or(Strategy::Fifo),
            time_slice: self.scheduler.time_slice,
            max_concurrent_agents: self.scheduler.max_concurrent_agents,
        }
    }

    pub fn core_kind(&self) -> Result<CoreKind> {
        match self.core.kind.as_str() {
            "simulated" => Ok(CoreKind::Simulated),
            "http" => Ok(CoreKind::Http),
            other => Err(config_err(
                "core.kind",
                format!("unknown core kind `{other}`"),
            )),
        }
    }

    pub fn core_config(&self) -> CoreConfig {
        CoreConfig {
            core_kind: self.core_kind().unwrap_or(CoreKind::Simulated),
            slots: self.core.sim.slots,
            prefill_cost_per_token: self.core.sim.prefill_cost_per_token.0,
            decode_cost_per_token: self.core.sim.decode_cost_per_token.0,
            max_new_tokens: self.core.sim.max_new_tokens,
            beam_width: self.core.sim.beam_width,
            seed: self.core.sim.seed,
            failed_attempt_waste: self.core.failed_attempt_waste,
        }
    }

    pub fn snapshot_mode(&self) -> Result<SnapshotMode> {
        match self.context.mode.as_str() {
            "text" => Ok(SnapshotMode::Text),
            "beam" => Ok(SnapshotMode::Beam),
            other => Err(config_err(
                "context.mode",
                format!("unknown snapshot mode `{other}` (expected text or beam)"),
            )),
        }
    }

    pub fn memory_config(&self) -> MemoryConfig {
        let micros = (self.memory.threshold * 1_000_000.0).round() as u64;
        MemoryConfig {
            capacity_bytes: self.memory.capacity_bytes,
            threshold_micros: micros,
            eviction_k: self.memory.eviction_k,
        }
    }

    pub fn access_config(&self) -> AccessConfig {
        AccessConfig {
            irreversible_ops: self.access.irreversible_ops.clone(),
            noninteractive_default: match self.access.noninteractive_default.as_str() {
                "allow" => NonInteractivePolicy::Allow,
                _ => NonInteractivePolicy::Deny,
            },
        }
    }

    pub fn tool_registrations(&self) -> Result<Vec<ToolRegistration>> {
        if self.tools.is_empty() {
            return Ok(crate::tool::default_mock_tools());
        }
        let mut regs = Vec::with_capacity(self.tools.len());
        for t in &self.tools {
            let reg = ToolRegistration {
                schema: ToolSchema {
                    name: t.name.clone(),
                    params: t.params.clone(),
                },
                max_parallel: t.max_parallel,
                cost_model_units: t.cost.0,
                behavior: t.behavior,
            };
            reg.schema
                .validate()
                .map_err(|e| config_err(&format!("tools.{}", t.name), e))?;
            regs.push(reg);
        }
        Ok(regs)
    }

    pub fn baseline_backoff_policy(&self) -> Result<BackoffPolicy> {
        match self.baseline.backoff.as_str() {
            "linear" => Ok(BackoffPolicy::Linear),
            "exponential" => Ok(BackoffPolicy::Exponential),
            "fixed" => Ok(BackoffPolicy::Fixed),
            other => Err(config_err(
                "baseline.backoff",
                format!(
                    "unknown backoff policy `{other}` (expected linear, exponential, or fixed)"
                ),
            )),
        }
    }

    /// Validate every section, reporting the first offending key.
    pub fn validate(&self) -> Result<()> {
        self.strategy()?;
        self.scheduler_config().validate()?;
        self.core_kind()?;
        self.core_config().validate()?;
        self.snapshot_mode()?;
        if !(0.0 < self.memory.threshold && self.memory.threshold <= 1.0) {
            return Err(config_err("memory.threshold", "must be in (0, 1]"));
        }
        let micros = self.memory.threshold * 1_000_000.0;
        if (micros - micros.round()).abs() > 1e-6 {
            return Err(config_err(
                "memory.threshold",
                "must have at most 6 fractional digits",
            ));
        }
        self.memory_config().validate()?;
        match self.access.noninteractive_default.as_str() {
            "deny" | "allow" => {}
            other => {
                return Err(config_err(
                    "access.noninteractive_default",
                    format!("unknown policy `{other}`"),
                ));
            }
        }
        self.tool_registrations()?;
        self.baseline_backoff_policy()?;
        if self.storage.root.is_empty() {
            return Err(config_err("storage.root", "must not be empty"));
        }
        Ok(())
    }
}
