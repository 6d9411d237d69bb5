//! Deterministic simulated LLM core.
//!
//! Output is a pure function of (seed, prompt, beam width, max tokens): the
//! decode length follows `1 + stable_hash(seed, prompt) mod max_new_tokens`,
//! and each step's candidate tokens and scores come from counter-mode draws.
//! Because no hidden RNG state exists, a run can be suspended at any token
//! boundary and resumed bit-exactly, in either snapshot mode.
//!
//! Model-time cost is explicit: `prefill_cost_per_token * P` once per call plus
//! `decode_cost_per_token` per emitted token, in exact micro-unit arithmetic.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::context::{BeamHypothesis, BeamState, DecodeSnapshot, SnapshotMode, SnapshotPayload};
use crate::error::{KernelError, Result};
use crate::sdk::Message;
use crate::syscall::CallId;
use crate::time::ModelTime;
use crate::tool::ToolSchema;

use super::prf::{self, mix, TAG_LENGTH, TAG_PARAM, TAG_SCORE, TAG_TOKEN, TAG_TOOL_PICK};
use super::{
    CoreConfig, FinishReason, GenOverrides, GenPlan, Generation, SegmentOutcome, SegmentRun,
    TextGenerator,
};

/// Virtual-time occupancy of the core's generation slots.
///
/// `claim` reserves one slot for an interval and fails when every slot is
/// still busy at the requested start: that failure is the out-of-memory
/// analogue direct (unscheduled) callers observe.
pub struct SlotBank {
    free: Mutex<Vec<ModelTime>>,
}

impl SlotBank {
    pub fn new(slots: usize) -> Self {
        SlotBank {
            free: Mutex::new(vec![ModelTime::ZERO; slots]),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.free.lock().unwrap().len()
    }

    /// Earliest model time at which some slot is free.
    pub fn earliest_free(&self) -> ModelTime {
        *self.free.lock().unwrap().iter().min().unwrap()
    }

    /// Reserve a slot for `[start, end)`. Picks the tightest eligible fit
    /// (latest free time, then lowest index) so the rule is deterministic.
    pub fn claim(&self, start: ModelTime, end: ModelTime) -> Result<usize> {
        let mut free = self.free.lock().unwrap();
        let slots = free.len();
        let mut best: Option<usize> = None;
        for (i, &f) in free.iter().enumerate() {
            if f <= start && best.is_none_or(|b| f > free[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                free[i] = end;
                Ok(i)
            }
            None => Err(KernelError::CapacityExceeded { slots }),
        }
    }

    /// Charge wasted work to the earliest-freeing slot: a rejected attempt's
    /// tensor load still consumed device time before being thrown away.
    pub fn charge_earliest(&self, cost: ModelTime) {
        let mut free = self.free.lock().unwrap();
        if let Some(min) = free.iter_mut().min() {
            *min += cost;
        }
    }
}

/// One live decoding path with its incremental signature.
#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    cum: u128,
    sig: u64,
}

fn root_hyp(seed: u64, pfp: u64) -> Hyp {
    Hyp {
        tokens: Vec::new(),
        cum: 0,
        sig: mix(&[seed, pfp]),
    }
}

fn render(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|&t| prf::word(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stable fingerprint of a prompt (role and content of every message).
pub fn prompt_fingerprint(prompt: &[Message]) -> u64 {
    let mut buf = Vec::new();
    for m in prompt {
        buf.extend_from_slice(m.role.as_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(m.content.as_bytes());
        buf.push(0x1e);
    }
    prf::fnv1a(&buf)
}

/// Token count of a prompt: whitespace-delimited words of every content field.
pub fn prompt_token_count(prompt: &[Message]) -> u64 {
    prompt
        .iter()
        .map(|m| m.content.split_whitespace().count() as u64)
        .sum()
}

pub struct SimulatedCore {
    cfg: CoreConfig,
    slots: SlotBank,
}

impl SimulatedCore {
    pub fn new(cfg: CoreConfig) -> Result<Self> {
        cfg.validate()?;
        let slots = SlotBank::new(cfg.slots);
        Ok(SimulatedCore { cfg, slots })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.cfg
    }

    pub fn slot_bank(&self) -> &SlotBank {
        &self.slots
    }

    fn seed(&self, ov: &GenOverrides) -> u64 {
        ov.seed.unwrap_or(self.cfg.seed)
    }

    fn width(&self, ov: &GenOverrides) -> u64 {
        ov.beam_width.unwrap_or(self.cfg.beam_width).clamp(1, 8)
    }

    fn max_new(&self, ov: &GenOverrides) -> u64 {
        ov.max_new_tokens.unwrap_or(self.cfg.max_new_tokens).max(1)
    }

    /// Decode length: `1 + stable_hash(seed, prompt) mod max_new_tokens`,
    /// unless the request pins it explicitly.
    pub fn planned_decode_tokens(&self, prompt: &[Message], ov: &GenOverrides) -> u64 {
        if let Some(f) = ov.forced_decode_tokens {
            return f.max(1);
        }
        let pfp = prompt_fingerprint(prompt);
        1 + mix(&[TAG_LENGTH, self.seed(ov), pfp]) % self.max_new(ov)
    }

    /// Shape and exact cost of the full generation for this prompt.
    pub fn plan(&self, prompt: &[Message], ov: &GenOverrides) -> GenPlan {
        let prompt_tokens = prompt_token_count(prompt);
        let decode_tokens = self.planned_decode_tokens(prompt, ov);
        GenPlan {
            prompt_tokens,
            decode_tokens,
            prefill_cost: self.cfg.prefill_cost_per_token.per_tokens(prompt_tokens),
            decode_cost: self.cfg.decode_cost_per_token.per_tokens(decode_tokens),
        }
    }

    fn expand(&self, seed: u64, pfp: u64, beam: &mut Vec<Hyp>, step: u64, width: u64) {
        let cands_per_hyp = 4u64.max(width);
        let mut cands: Vec<Hyp> = Vec::with_capacity((beam.len() as u64 * cands_per_hyp) as usize);
        for h in beam.iter() {
            let base = mix(&[TAG_TOKEN, seed, pfp, h.sig, step]);
            let stride = 2 * ((base >> 8) % 32) + 1;
            for j in 0..cands_per_hyp {
                let token = ((base % 64 + j * stride) % 64) as u32;
                let score = mix(&[TAG_SCORE, seed, pfp, h.sig, step, token as u64]);
                let mut tokens = h.tokens.clone();
                tokens.push(token);
                cands.push(Hyp {
                    cum: h.cum + score as u128,
                    sig: mix(&[h.sig, token as u64]),
                    tokens,
                });
            }
        }
        cands.sort_by(|a, b| (Reverse(a.cum), &a.tokens).cmp(&(Reverse(b.cum), &b.tokens)));
        cands.truncate(width as usize);
        *beam = cands;
    }

    /// Recompute the beam at a given step from scratch. Pure, so text-mode
    /// restores re-derive exactly the state an uninterrupted run would hold.
    fn beam_at_step(&self, seed: u64, pfp: u64, width: u64, steps: u64) -> Vec<Hyp> {
        let mut beam = vec![root_hyp(seed, pfp)];
        for step in 0..steps {
            self.expand(seed, pfp, &mut beam, step, width);
        }
        beam
    }

    fn restore_beam(
        &self,
        snap: &DecodeSnapshot,
        seed: u64,
        pfp: u64,
        width: u64,
    ) -> Result<Vec<Hyp>> {
        match &snap.payload {
            SnapshotPayload::Beam(state) => {
                state.validate()?;
                Ok(state
                    .hypotheses
                    .iter()
                    .map(|h| Hyp {
                        tokens: h.tokens.clone(),
                        cum: h.cumulative_score,
                        sig: h
                            .tokens
                            .iter()
                            .fold(mix(&[seed, pfp]), |sig, &t| mix(&[sig, t as u64])),
                    })
                    .collect())
            }
            SnapshotPayload::Text(text) => {
                let beam = self.beam_at_step(seed, pfp, width, snap.tokens_done);
                let derived = render(&beam[0].tokens);
                if &derived != text {
                    return Err(KernelError::Context(format!(
                        "text snapshot diverges from decode path: `{text}` vs `{derived}`"
                    )));
                }
                Ok(beam)
            }
        }
    }

    fn snapshot_of(
        &self,
        cid: CallId,
        mode: SnapshotMode,
        beam: &[Hyp],
        prefill_done: u64,
        tokens_done: u64,
        pfp: u64,
    ) -> DecodeSnapshot {
        let payload = match mode {
            SnapshotMode::Text => SnapshotPayload::Text(render(&beam[0].tokens)),
            SnapshotMode::Beam => SnapshotPayload::Beam(BeamState {
                step: tokens_done,
                hypotheses: beam
                    .iter()
                    .map(|h| BeamHypothesis {
                        tokens: h.tokens.clone(),
                        cumulative_score: h.cum,
                    })
                    .collect(),
            }),
        };
        DecodeSnapshot {
            cid,
            prefill_progress: prefill_done,
            tokens_done,
            prompt_fingerprint: pfp,
            payload,
        }
    }

    /// Run one generation segment.
    ///
    /// `token_budget` is the scheduling turn's decode-token allowance; the
    /// segment may spend at most `token_budget * decode_cost_per_token` of
    /// model time across remaining prefill and decode work (the first work
    /// item of a segment always proceeds, so progress is guaranteed). Without
    /// a budget the call runs to completion. `resume` must be a snapshot this
    /// core produced for the same prompt.
    pub fn llm_generate(
        &self,
        prompt: &[Message],
        ov: &GenOverrides,
        resume: Option<&DecodeSnapshot>,
        token_budget: Option<u64>,
        mode: SnapshotMode,
        cid: CallId,
    ) -> Result<SegmentRun> {
        let pfp = prompt_fingerprint(prompt);
        let prompt_tokens = prompt_token_count(prompt);
        let seed = self.seed(ov);
        let width = self.width(ov);
        let max_new = self.max_new(ov);
        let target_tokens = self.planned_decode_tokens(prompt, ov);

        let (mut prefill_done, mut beam) = match resume {
            Some(snap) => {
                if snap.prompt_fingerprint != pfp {
                    return Err(KernelError::Context(
                        "resume snapshot was taken for a different prompt".into(),
                    ));
                }
                snap.validate(prompt_tokens)?;
                (
                    snap.prefill_progress,
                    self.restore_beam(snap, seed, pfp, width)?,
                )
            }
            None => (0, vec![root_hyp(seed, pfp)]),
        };
        let mut tokens_done = beam[0].tokens.len() as u64;

        let budget: Option<ModelTime> =
            token_budget.map(|t| self.cfg.decode_cost_per_token.per_tokens(t));
        let mut spent = ModelTime::ZERO;
        let mut consumed_any = false;
        let over_budget = |spent: ModelTime, item: ModelTime, consumed: bool| -> bool {
            consumed && budget.is_some_and(|b| spent + item > b)
        };

        while prefill_done < prompt_tokens {
            let item = self.cfg.prefill_cost_per_token;
            if over_budget(spent, item, consumed_any) {
                return Ok(SegmentRun {
                    cost: spent,
                    outcome: SegmentOutcome::Suspended(self.snapshot_of(
                        cid,
                        mode,
                        &beam,
                        prefill_done,
                        tokens_done,
                        pfp,
                    )),
                });
            }
            spent += item;
            prefill_done += 1;
            consumed_any = true;
        }

        while tokens_done < target_tokens {
            let item = self.cfg.decode_cost_per_token;
            if over_budget(spent, item, consumed_any) {
                return Ok(SegmentRun {
                    cost: spent,
                    outcome: SegmentOutcome::Suspended(self.snapshot_of(
                        cid,
                        mode,
                        &beam,
                        prefill_done,
                        tokens_done,
                        pfp,
                    )),
                });
            }
            self.expand(seed, pfp, &mut beam, tokens_done, width);
            tokens_done += 1;
            spent += item;
            consumed_any = true;
        }

        let finish_reason = if target_tokens >= max_new {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Ok(SegmentRun {
            cost: spent,
            outcome: SegmentOutcome::Finished(Generation {
                text: render(&beam[0].tokens),
                token_count: target_tokens,
                finish_reason,
                tool_calls: None,
            }),
        })
    }

    /// Deterministically synthesize a tool call for a tool-use request: pick a
    /// tool by prompt hash and fill required parameters with typed draws. The
    /// result is appended to generated text so the normal parsing path
    /// recovers it.
    fn synthesize_tool_call(
        &self,
        prompt: &[Message],
        ov: &GenOverrides,
        tools: &[ToolSchema],
    ) -> Option<String> {
        if tools.is_empty() {
            return None;
        }
        let pfp = prompt_fingerprint(prompt);
        let seed = self.seed(ov);
        let pick = (mix(&[TAG_TOOL_PICK, seed, pfp]) % tools.len() as u64) as usize;
        let schema = &tools[pick];
        let mut params = BTreeMap::new();
        for (name, spec) in &schema.params {
            if !spec.required {
                continue;
            }
            let draw = mix(&[TAG_PARAM, seed, pfp, prf::fnv1a(name.as_bytes())]);
            let value = match spec.param_type {
                crate::tool::ParamType::String => {
                    serde_json::Value::String(prf::word((draw % 64) as u32).to_string())
                }
                crate::tool::ParamType::Integer => serde_json::Value::from((draw % 100) as i64),
                crate::tool::ParamType::Number => serde_json::Value::from((draw % 100) as f64),
                crate::tool::ParamType::Boolean => serde_json::Value::Bool(draw.is_multiple_of(2)),
            };
            params.insert(name.clone(), value);
        }
        let call = super::ToolCall {
            name: schema.name.clone(),
            parameters: params,
        };
        Some(serde_json::to_string(&vec![call]).expect("tool call serializes"))
    }
}

impl TextGenerator for SimulatedCore {
    fn generate(&self, prompt: &[Message], overrides: &GenOverrides) -> Result<Generation> {
        let run = self.llm_generate(prompt, overrides, None, None, SnapshotMode::Text, 0)?;
        match run.outcome {
            SegmentOutcome::Finished(gen) => Ok(gen),
            SegmentOutcome::Suspended(_) => unreachable!("unbudgeted run cannot suspend"),
        }
    }

    fn synthesize_tool_call_json(
        &self,
        prompt: &[Message],
        overrides: &GenOverrides,
        tools: &[ToolSchema],
    ) -> Option<String> {
        self.synthesize_tool_call(prompt, overrides, tools)
    }
}
