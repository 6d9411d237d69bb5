//! Model time: the deterministic logical clock all scheduling and metrics run on.
//!
//! Durations and timestamps are fixed-point with micro-unit resolution so that
//! cost arithmetic (per-token costs times token counts, segment sums) is exact
//! and identical across platforms. Wall clocks are never consulted.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Micro-units per model-time unit.
pub const MICROS_PER_UNIT: i64 = 1_000_000;

/// A point or span on the model-time axis, in micro-units.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ModelTime(i64);

impl ModelTime {
    pub const ZERO: ModelTime = ModelTime(0);
    pub const MAX: ModelTime = ModelTime(i64::MAX);

    pub fn from_micros(micros: i64) -> Self {
        ModelTime(micros)
    }

    pub fn from_units(units: i64) -> Self {
        ModelTime(units * MICROS_PER_UNIT)
    }

    pub fn as_micros(self) -> i64 {
        self.0
    }

    /// Lossy conversion for reporting; internal math never uses this.
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_UNIT as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Scale a per-token cost by a token count. Exact integer arithmetic.
    pub fn per_tokens(self, tokens: u64) -> ModelTime {
        ModelTime(
            self.0
                .checked_mul(tokens as i64)
                .expect("model-time overflow"),
        )
    }

    /// How many whole tokens at `per_token` cost fit in this budget.
    /// Returns `u64::MAX` when the per-token cost is zero (free tokens).
    pub fn tokens_affordable(self, per_token: ModelTime) -> u64 {
        if per_token.0 <= 0 {
            u64::MAX
        } else {
            (self.0 / per_token.0).max(0) as u64
        }
    }

    pub fn saturating_sub(self, rhs: ModelTime) -> ModelTime {
        ModelTime(self.0.saturating_sub(rhs.0).max(0))
    }

    /// Parse a non-negative decimal like `"0.2"` or `"16"` exactly.
    ///
    /// At most six fractional digits are accepted so the value maps onto the
    /// micro-unit grid without rounding.
    pub fn parse_decimal(s: &str) -> Result<ModelTime, String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty model-time literal".into());
        }
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.starts_with('-') {
            return Err(format!("model time must be non-negative: {s}"));
        }
        if frac_part.len() > 6 {
            return Err(format!(
                "model-time literal {s} has more than 6 fractional digits"
            ));
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part
                .parse()
                .map_err(|_| format!("bad model-time literal: {s}"))?
        };
        let mut frac: i64 = 0;
        if !frac_part.is_empty() {
            frac = frac_part
                .parse()
                .map_err(|_| format!("bad model-time literal: {s}"))?;
            for _ in frac_part.len()..6 {
                frac *= 10;
            }
        }
        int.checked_mul(MICROS_PER_UNIT)
            .and_then(|v| v.checked_add(frac))
            .map(ModelTime)
            .ok_or_else(|| format!("model-time literal out of range: {s}"))
    }

    /// Exact conversion from an f64 that sits on the micro-unit grid
    /// (used for config values deserialized from TOML numbers).
    pub fn from_config_number(v: f64) -> Result<ModelTime, String> {
        if !v.is_finite() || v < 0.0 {
            return Err(format!("model time must be a non-negative number, got {v}"));
        }
        let micros = (v * MICROS_PER_UNIT as f64).round();
        if (micros / MICROS_PER_UNIT as f64 - v).abs() > 1e-9 * v.abs().max(1.0) {
            return Err(format!("model time {v} does not fit micro-unit resolution"));
        }
        Ok(ModelTime(micros as i64))
    }
}

impl Add for ModelTime {
    type Output = ModelTime;
    fn add(self, rhs: ModelTime) -> ModelTime {
        ModelTime(self.0.checked_add(rhs.0).expect("model-time overflow"))
    }
}

impl AddAssign for ModelTime {
    fn add_assign(&mut self, rhs: ModelTime) {
        *self = *self + rhs;
    }
}

impl Sub for ModelTime {
    type Output = ModelTime;
    fn sub(self, rhs: ModelTime) -> ModelTime {
        ModelTime(self.0 - rhs.0)
    }
}

impl Mul<u64> for ModelTime {
    type Output = ModelTime;
    fn mul(self, rhs: u64) -> ModelTime {
        self.per_tokens(rhs)
    }
}

impl Sum for ModelTime {
    fn sum<I: Iterator<Item = ModelTime>>(iter: I) -> ModelTime {
        iter.fold(ModelTime::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for ModelTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / MICROS_PER_UNIT as u64;
        let frac = abs % MICROS_PER_UNIT as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let mut frac_str = format!("{frac:06}");
            while frac_str.ends_with('0') {
                frac_str.pop();
            }
            write!(f, "{sign}{int}.{frac_str}")
        }
    }
}
