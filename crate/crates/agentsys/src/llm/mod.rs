//! LLM core abstraction: a uniform generation interface over LLM instances,
//! plus prompt formatting for tool calling and tool-call parsing.
//!
//! The deterministic simulated core lives in [`sim`]; a generic HTTP
//! chat-completions client lives in [`http`].

pub mod http;
pub mod prf;
pub mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::context::DecodeSnapshot;
use crate::error::{ErrorInfo, KernelError, Result};
use crate::sdk::{ActionType, Message, Query, Response};
use crate::syscall::{SysCall, SysCallRequest};
use crate::time::ModelTime;
use crate::tool::ToolSchema;

pub use sim::SimulatedCore;

/// Which core implementation a kernel runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreKind {
    Simulated,
    Http,
}

/// Core parameters. Costs are per-token model-time; `slots` is the number of
/// prompt requests the core can hold at once (the single-GPU setting is 1).
#[derive(Debug, Clone)]
pub struct CoreConfig {
    pub core_kind: CoreKind,
    pub slots: usize,
    pub prefill_cost_per_token: ModelTime,
    pub decode_cost_per_token: ModelTime,
    pub max_new_tokens: u64,
    pub beam_width: u64,
    pub seed: u64,
    /// Fraction of prefill cost a failed direct-mode attempt burns.
    pub failed_attempt_waste: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            core_kind: CoreKind::Simulated,
            slots: 1,
            prefill_cost_per_token: ModelTime::from_micros(200_000),
            decode_cost_per_token: ModelTime::from_units(1),
            max_new_tokens: 256,
            beam_width: 1,
            seed: 0,
            failed_attempt_waste: 1.0,
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 1 {
            return Err(KernelError::Config {
                key: "core.sim.slots".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.decode_cost_per_token <= ModelTime::ZERO {
            return Err(KernelError::Config {
                key: "core.sim.decode_cost_per_token".into(),
                message: "must be positive".into(),
            });
        }
        if self.beam_width < 1 || self.beam_width > 8 {
            return Err(KernelError::Config {
                key: "core.sim.beam_width".into(),
                message: "must be in 1..=8".into(),
            });
        }
        if self.max_new_tokens < 1 {
            return Err(KernelError::Config {
                key: "core.sim.max_new_tokens".into(),
                message: "must be >= 1".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.failed_attempt_waste) {
            return Err(KernelError::Config {
                key: "core.failed_attempt_waste".into(),
                message: "must be in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Per-request overrides of the core defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenOverrides {
    pub max_new_tokens: Option<u64>,
    pub beam_width: Option<u64>,
    pub seed: Option<u64>,
    /// Pin the decode length exactly (workload shaping in the harness).
    pub forced_decode_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Length,
    Stop,
}

/// Output of one complete generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub token_count: u64,
    pub finish_reason: FinishReason,
    pub tool_calls: Option<Vec<ToolCall>>,
}

/// A parsed tool invocation. The name is always `org/tool_name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// Deterministic shape and cost of a full generation, known before running it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenPlan {
    pub prompt_tokens: u64,
    pub decode_tokens: u64,
    pub prefill_cost: ModelTime,
    pub decode_cost: ModelTime,
}

impl GenPlan {
    pub fn total_cost(&self) -> ModelTime {
        self.prefill_cost + self.decode_cost
    }
}

/// One scheduling turn's worth of generation work.
#[derive(Debug, Clone)]
pub struct SegmentRun {
    /// Model-time consumed by this segment (prefill share plus decoded tokens).
    pub cost: ModelTime,
    pub outcome: SegmentOutcome,
}

#[derive(Debug, Clone)]
pub enum SegmentOutcome {
    Finished(Generation),
    Suspended(DecodeSnapshot),
}

/// Complete-run generation interface shared by all cores.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, prompt: &[Message], overrides: &GenOverrides) -> Result<Generation>;

    /// For cores without native tool support: synthesize the tool-call array
    /// appended to tool-use generations. Real endpoints emit their own calls
    /// and return `None`.
    fn synthesize_tool_call_json(
        &self,
        _prompt: &[Message],
        _overrides: &GenOverrides,
        _tools: &[ToolSchema],
    ) -> Option<String> {
        None
    }
}

/// Append a system message that frames the response structure and serializes
/// each tool's name and parameter schema in a fixed layout.
///
/// Callers must not double-format: formatting an already-formatted prompt adds
/// a second block. The kernel formats exactly once per query.
pub fn tool_calling_input_format(prompt: &[Message], tools: &[ToolSchema]) -> Result<Vec<Message>> {
    for schema in tools {
        schema.validate()?;
    }
    let mut block = String::new();
    block.push_str("== task framing ==\n");
    block.push_str("work through the request step by step; state the goal, ");
    block.push_str("the actions taken, and the final result in that order.\n");
    if !tools.is_empty() {
        block.push_str("== available tools ==\n");
        for schema in tools {
            block.push_str(&format!("{} {}\n", schema.name, schema.params_json()));
        }
        block.push_str("== tool call protocol ==\n");
        block.push_str("to invoke tools, output a json array like: ");
        block.push_str("[{\"name\":\"org/tool_name\",\"parameters\":{\"key\":\"value\"}}]\n");
    }
    let mut formatted = prompt.to_vec();
    formatted.push(Message::new("system", block.trim_end()));
    Ok(formatted)
}

/// Extract the first well-formed bracketed array of `{name, parameters}`
/// objects from generated text.
///
/// Grammar: a candidate region starts at a `[` whose first non-whitespace
/// successor is `{` and extends to the matching `]` (string-aware). The first
/// candidate must parse as JSON and every entry must carry an `org/tool_name`
/// name; otherwise it is a parse error, which is distinct from "no candidate
/// region at all" (empty list).
pub fn parse_tool_calls(text: &str) -> Result<Vec<ToolCall>> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let rest = text[i + 1..].trim_start();
            if rest.starts_with('{') {
                let region = bracketed_region(&text[i..]).ok_or_else(|| {
                    KernelError::ToolCallParse("unterminated tool-call array".into())
                })?;
                return parse_region(region);
            }
        }
        i += 1;
    }
    Ok(Vec::new())
}

/// Slice out `[...]` with balanced brackets, skipping over string literals.
fn bracketed_region(s: &str) -> Option<&str> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (idx, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&s[..=idx]);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Deserialize)]
struct RawToolCall {
    name: String,
    #[serde(default)]
    parameters: BTreeMap<String, serde_json::Value>,
}

fn parse_region(region: &str) -> Result<Vec<ToolCall>> {
    let raw: Vec<RawToolCall> = serde_json::from_str(region)
        .map_err(|e| KernelError::ToolCallParse(format!("bad tool-call json: {e}")))?;
    let mut calls = Vec::with_capacity(raw.len());
    for r in raw {
        if r.name.chars().filter(|&c| c == '/').count() != 1 {
            return Err(KernelError::ToolCallParse(format!(
                "tool name `{}` must be org/tool_name",
                r.name
            )));
        }
        calls.push(ToolCall {
            name: r.name,
            parameters: r.parameters,
        });
    }
    Ok(calls)
}

/// The LLM resource module: formats requests per action type, runs the core,
/// and parses tool calls out of the generated text.
pub struct LlmModule<G: TextGenerator> {
    core: std::sync::Arc<G>,
}

impl<G: TextGenerator> LlmModule<G> {
    pub fn new(core: std::sync::Arc<G>) -> Self {
        LlmModule { core }
    }

    pub fn core(&self) -> &std::sync::Arc<G> {
        &self.core
    }

    /// The prompt actually sent to the core for a query.
    pub fn effective_prompt(&self, query: &Query) -> Result<Vec<Message>> {
        match query.action_type {
            ActionType::ToolUse => tool_calling_input_format(&query.messages, &query.tools),
            _ => Ok(query.messages.clone()),
        }
    }

    /// Process an LLM syscall end to end: format, generate, parse.
    pub fn address_request(&self, call: &SysCall) -> Response {
        let SysCallRequest::Llm { query, overrides } = call.request() else {
            return Response::failed("llm", "not an llm syscall");
        };
        match self.run_query(query, overrides) {
            Ok(resp) => resp,
            Err(e) => Response {
                response_message: None,
                tool_calls: None,
                status: crate::sdk::ResponseStatus::Failed,
                error: Some(ErrorInfo::new("llm", &e)),
            },
        }
    }

    pub fn run_query(&self, query: &Query, overrides: &GenOverrides) -> Result<Response> {
        let prompt = self.effective_prompt(query)?;
        let gen = self.core.generate(&prompt, overrides)?;
        self.decorate_and_finalize(query, &prompt, overrides, gen)
    }

    /// Apply the core's tool-call synthesis to a finished tool-use
    /// generation, then assemble the response.
    pub fn decorate_and_finalize(
        &self,
        query: &Query,
        prompt: &[Message],
        overrides: &GenOverrides,
        mut gen: Generation,
    ) -> Result<Response> {
        if query.action_type == ActionType::ToolUse {
            if let Some(json) = self
                .core
                .synthesize_tool_call_json(prompt, overrides, &query.tools)
            {
                gen.text.push(' ');
                gen.text.push_str(&json);
            }
        }
        self.finalize(query, gen)
    }

    /// Assemble the final [`Response`] from a finished generation.
    pub fn finalize(&self, query: &Query, gen: Generation) -> Result<Response> {
        match query.action_type {
            ActionType::ToolUse => {
                let calls = match &gen.tool_calls {
                    Some(calls) => calls.clone(),
                    None => parse_tool_calls(&gen.text)?,
                };
                Ok(Response {
                    response_message: Some(gen.text),
                    tool_calls: Some(calls),
                    status: crate::sdk::ResponseStatus::Ok,
                    error: None,
                })
            }
            _ => Ok(Response::text(gen.text)),
        }
    }
}
