//! Tool manager: registry, dynamic instantiation by `org/name`, parameter
//! post-verification, and a conflict map bounding per-tool parallelism.
//!
//! Tools are registered with a constructor function; invocation looks the
//! constructor up by name, validates parameters against the declared schema,
//! and runs a fresh instance. Mock tools (echo, delay, fail, counter) stand in
//! for networked tools so every manager path is exercisable offline.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};
use crate::time::ModelTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub param_type: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub pattern: Option<String>,
}

/// A tool's callable surface: name and parameter schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamSpec>,
}

impl ToolSchema {
    pub fn validate(&self) -> Result<()> {
        if !valid_tool_name(&self.name) {
            return Err(KernelError::Validation {
                param: "name".into(),
                message: format!("`{}` must match org/tool_name in [a-z0-9_]", self.name),
            });
        }
        for (param, spec) in &self.params {
            if let Some(p) = &spec.pattern {
                regex::Regex::new(p).map_err(|e| KernelError::Validation {
                    param: param.clone(),
                    message: format!("bad pattern: {e}"),
                })?;
            }
        }
        Ok(())
    }

    /// Deterministic JSON rendering of the parameter schema (BTreeMap order).
    pub fn params_json(&self) -> String {
        serde_json::to_string(&self.params).expect("schema serializes")
    }
}

fn valid_tool_name(name: &str) -> bool {
    let mut parts = name.split('/');
    let (Some(org), Some(tool), None) = (parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    let ok = |s: &str| {
        !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    };
    ok(org) && ok(tool)
}

/// Convert a snake_case name to CamelCase, e.g. the class-name convention
/// used when instantiating tools.
pub fn snake_to_camel(s: &str) -> String {
    s.split('_')
        .map(|component| {
            let mut chars = component.chars();
            match chars.next() {
                Some(first) => {
                    first.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase()
                }
                None => String::new(),
            }
        })
        .collect()
}

/// The tool syscall payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl From<crate::llm::ToolCall> for ToolInvocation {
    fn from(call: crate::llm::ToolCall) -> Self {
        ToolInvocation {
            name: call.name,
            parameters: call.parameters,
        }
    }
}

/// A runnable tool instance. Constructed fresh per invocation.
pub trait ToolInstance: Send {
    fn run(&mut self, params: &BTreeMap<String, serde_json::Value>) -> Result<String>;
}

pub type ToolCtor = Arc<dyn Fn() -> Box<dyn ToolInstance> + Send + Sync>;

/// Mock behaviors standing in for networked tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Return the `s` parameter unchanged.
    Echo,
    /// Busy for `units` model-time units, then confirm.
    Delay,
    /// Fail deterministically on `rate_permille` out of 1000 invocations.
    Fail { rate_permille: u32 },
    /// Count invocations, returning the running total.
    Counter,
}

#[derive(Debug, Clone)]
pub struct ToolRegistration {
    pub schema: ToolSchema,
    pub max_parallel: usize,
    pub cost_model_units: ModelTime,
    pub behavior: MockBehavior,
}

struct EchoTool;

impl ToolInstance for EchoTool {
    fn run(&mut self, params: &BTreeMap<String, serde_json::Value>) -> Result<String> {
        match params.get("s").and_then(|v| v.as_str()) {
            Some(s) => Ok(s.to_string()),
            None => Ok(String::new()),
        }
    }
}

struct DelayTool;

impl ToolInstance for DelayTool {
    fn run(&mut self, params: &BTreeMap<String, serde_json::Value>) -> Result<String> {
        let units = params.get("units").and_then(|v| v.as_i64()).unwrap_or(0);
        Ok(format!("waited {units} units"))
    }
}

struct FailTool {
    rate_permille: u32,
    invocations: Arc<AtomicU64>,
}

impl ToolInstance for FailTool {
    fn run(&mut self, _params: &BTreeMap<String, serde_json::Value>) -> Result<String> {
        let n = self.invocations.fetch_add(1, Ordering::SeqCst);
        if crate::llm::prf::mix(&[n]) % 1000 < self.rate_permille as u64 {
            Err(KernelError::ToolFailed {
                tool: "fail".into(),
                message: format!("simulated failure on invocation {n}"),
            })
        } else {
            Ok(format!("survived invocation {n}"))
        }
    }
}

struct CounterTool {
    count: Arc<AtomicU64>,
}

impl ToolInstance for CounterTool {
    fn run(&mut self, _params: &BTreeMap<String, serde_json::Value>) -> Result<String> {
        Ok(format!("{}", self.count.fetch_add(1, Ordering::SeqCst) + 1))
    }
}

pub fn ctor_for(behavior: MockBehavior) -> ToolCtor {
    match behavior {
        MockBehavior::Echo => Arc::new(|| Box::new(EchoTool)),
        MockBehavior::Delay => Arc::new(|| Box::new(DelayTool)),
        MockBehavior::Fail { rate_permille } => {
            let shared = Arc::new(AtomicU64::new(0));
            Arc::new(move || {
                Box::new(FailTool {
                    rate_permille,
                    invocations: Arc::clone(&shared),
                })
            })
        }
        MockBehavior::Counter => {
            let shared = Arc::new(AtomicU64::new(0));
            Arc::new(move || {
                Box::new(CounterTool {
                    count: Arc::clone(&shared),
                })
            })
        }
    }
}

/// Model-time execution intervals per tool. `running_at` recovers the
/// in-flight count at any instant; `peak` is its maximum over the whole run.
#[derive(Default)]
pub struct ConflictMap {
    intervals: Mutex<HashMap<String, Vec<(ModelTime, ModelTime)>>>,
}

impl ConflictMap {
    pub fn record(&self, name: &str, start: ModelTime, end: ModelTime) {
        let mut map = self.intervals.lock().unwrap();
        map.entry(name.to_string()).or_default().push((start, end));
    }

    pub fn running_at(&self, name: &str, t: ModelTime) -> usize {
        let map = self.intervals.lock().unwrap();
        map.get(name)
            .map(|v| v.iter().filter(|(s, e)| *s <= t && t < *e).count())
            .unwrap_or(0)
    }

    /// Maximum overlap of recorded intervals (half-open [start, end)).
    pub fn peak(&self, name: &str) -> usize {
        let map = self.intervals.lock().unwrap();
        let Some(intervals) = map.get(name) else {
            return 0;
        };
        let mut events: Vec<(ModelTime, i64)> = Vec::with_capacity(intervals.len() * 2);
        for &(s, e) in intervals {
            events.push((s, 1));
            events.push((e, -1));
        }
        // Ends sort before starts at the same instant: [a,t) and [t,b) do not overlap.
        events.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut cur = 0i64;
        let mut peak = 0i64;
        for (_, d) in events {
            cur += d;
            peak = peak.max(cur);
        }
        peak as usize
    }

    pub fn total_runs(&self, name: &str) -> usize {
        self.intervals
            .lock()
            .unwrap()
            .get(name)
            .map_or(0, |v| v.len())
    }
}

struct Registered {
    reg: ToolRegistration,
    ctor: ToolCtor,
}

/// The tool resource module.
pub struct ToolManager {
    tools: Mutex<HashMap<String, Registered>>,
    conflicts: ConflictMap,
}

impl ToolManager {
    pub fn new() -> Self {
        ToolManager {
            tools: Mutex::new(HashMap::new()),
            conflicts: ConflictMap::default(),
        }
    }

    /// Register a tool with the constructor derived from its mock behavior.
    pub fn register_tool(&self, reg: ToolRegistration) -> Result<()> {
        let ctor = ctor_for(reg.behavior);
        self.register_tool_with(reg, ctor)
    }

    pub fn register_tool_with(&self, reg: ToolRegistration, ctor: ToolCtor) -> Result<()> {
        reg.schema.validate()?;
        if reg.max_parallel == 0 {
            return Err(KernelError::Validation {
                param: "max_parallel".into(),
                message: "must be >= 1".into(),
            });
        }
        let mut tools = self.tools.lock().unwrap();
        if tools.contains_key(&reg.schema.name) {
            return Err(KernelError::Validation {
                param: "name".into(),
                message: format!("tool `{}` already registered", reg.schema.name),
            });
        }
        tools.insert(reg.schema.name.clone(), Registered { reg, ctor });
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<ToolRegistration> {
        let tools = self.tools.lock().unwrap();
        tools
            .get(name)
            .map(|r| r.reg.clone())
            .ok_or_else(|| KernelError::UnknownTool(name.to_string()))
    }

    pub fn conflict_map(&self) -> &ConflictMap {
        &self.conflicts
    }

    /// Model-time cost of an invocation, known before execution.
    pub fn invocation_cost(&self, inv: &ToolInvocation) -> Result<ModelTime> {
        let reg = self.lookup(&inv.name)?;
        let extra = match reg.behavior {
            MockBehavior::Delay => {
                let units = inv
                    .parameters
                    .get("units")
                    .and_then(|v| v.as_i64())
                    .unwrap_or(0)
                    .max(0);
                ModelTime::from_units(units)
            }
            _ => ModelTime::ZERO,
        };
        Ok(reg.cost_model_units + extra)
    }

    /// Post-verification: required parameters present, types match, patterns
    /// match, unknown parameters rejected. Returns the normalized map.
    pub fn validate_params(
        schema: &ToolSchema,
        params: &BTreeMap<String, serde_json::Value>,
    ) -> Result<BTreeMap<String, serde_json::Value>> {
        for (name, spec) in &schema.params {
            match params.get(name) {
                None if spec.required => {
                    return Err(KernelError::Validation {
                        param: name.clone(),
                        message: "required parameter missing".into(),
                    });
                }
                None => {}
                Some(value) => {
                    let type_ok = match spec.param_type {
                        ParamType::String => value.is_string(),
                        ParamType::Integer => value.is_i64() || value.is_u64(),
                        ParamType::Number => value.is_number(),
                        ParamType::Boolean => value.is_boolean(),
                    };
                    if !type_ok {
                        return Err(KernelError::Validation {
                            param: name.clone(),
                            message: format!("expected {:?}", spec.param_type),
                        });
                    }
                    if let (Some(pattern), Some(s)) = (&spec.pattern, value.as_str()) {
                        let re =
                            regex::Regex::new(pattern).map_err(|e| KernelError::Validation {
                                param: name.clone(),
                                message: format!("bad pattern: {e}"),
                            })?;
                        if !re.is_match(s) {
                            return Err(KernelError::Validation {
                                param: name.clone(),
                                message: format!("`{s}` does not match `{pattern}`"),
                            });
                        }
                    }
                }
            }
        }
        for name in params.keys() {
            if !schema.params.contains_key(name) {
                return Err(KernelError::Validation {
                    param: name.clone(),
                    message: "unknown parameter".into(),
                });
            }
        }
        Ok(params.clone())
    }

    /// Validate and execute an invocation whose model-time slot is
    /// `[start, end)`. The interval is recorded in the conflict map whether
    /// the body succeeds or fails; validation failures consume no slot.
    pub fn tool_run(
        &self,
        inv: &ToolInvocation,
        start: ModelTime,
        end: ModelTime,
    ) -> Result<String> {
        let (reg, ctor) = {
            let tools = self.tools.lock().unwrap();
            let r = tools
                .get(&inv.name)
                .ok_or_else(|| KernelError::UnknownTool(inv.name.clone()))?;
            (r.reg.clone(), Arc::clone(&r.ctor))
        };
        let params = Self::validate_params(&reg.schema, &inv.parameters)?;
        self.conflicts.record(&inv.name, start, end);
        let mut instance = ctor();
        instance.run(&params)
    }
}

impl Default for ToolManager {
    fn default() -> Self {
        Self::new()
    }
}

fn spec(param_type: ParamType, required: bool) -> ParamSpec {
    ParamSpec {
        param_type,
        required,
        pattern: None,
    }
}

/// The built-in mock tool suite: enough to exercise every manager path.
pub fn default_mock_tools() -> Vec<ToolRegistration> {
    vec![
        ToolRegistration {
            schema: ToolSchema {
                name: "demo/echo".into(),
                params: BTreeMap::from([("s".into(), spec(ParamType::String, true))]),
            },
            max_parallel: 1,
            cost_model_units: ModelTime::from_units(1),
            behavior: MockBehavior::Echo,
        },
        ToolRegistration {
            schema: ToolSchema {
                name: "demo/delay".into(),
                params: BTreeMap::from([("units".into(), spec(ParamType::Integer, true))]),
            },
            max_parallel: 1,
            cost_model_units: ModelTime::ZERO,
            behavior: MockBehavior::Delay,
        },
        ToolRegistration {
            schema: ToolSchema {
                name: "demo/fail".into(),
                params: BTreeMap::new(),
            },
            max_parallel: 1,
            cost_model_units: ModelTime::from_units(1),
            behavior: MockBehavior::Fail {
                rate_permille: 1000,
            },
        },
        ToolRegistration {
            schema: ToolSchema {
                name: "demo/counter".into(),
                params: BTreeMap::new(),
            },
            max_parallel: 1,
            cost_model_units: ModelTime::from_units(1),
            behavior: MockBehavior::Counter,
        },
    ]
}
