//! Structural and physical sanity checks for states.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grid::{Channel, Variable, N_CHANNELS};
use crate::state::StateSet;

/// Per-variable plausibility bounds. These are sanity gates for catching
/// unit mix-ups and corrupt exports, not physical limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeChecks {
    pub t2_k: (f32, f32),
    pub mslp_pa: (f32, f32),
    pub q_kg_kg: (f32, f32),
    pub max_abs_wind: f32,
}

impl Default for RangeChecks {
    fn default() -> Self {
        RangeChecks {
            t2_k: (150.0, 350.0),
            mslp_pa: (85_000.0, 110_000.0),
            q_kg_kg: (0.0, 0.05),
            max_abs_wind: 150.0,
        }
    }
}

impl RangeChecks {
    pub fn bounds(&self, variable: Variable) -> Option<(f32, f32)> {
        match variable {
            Variable::T2 => Some(self.t2_k),
            Variable::Mslp => Some(self.mslp_pa),
            Variable::Q => Some(self.q_kg_kg),
            v if v.is_wind() => Some((-self.max_abs_wind, self.max_abs_wind)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValidationOptions {
    /// `None` skips the physical-range checks.
    pub ranges: Option<RangeChecks>,
}

impl ValidationOptions {
    /// Structure and finiteness only; used on backend outputs.
    pub fn structural() -> Self {
        ValidationOptions { ranges: None }
    }

    /// Everything, with default bounds; used on ingestion.
    pub fn ingestion() -> Self {
        ValidationOptions { ranges: Some(RangeChecks::default()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    InvalidGrid(String),
    ChannelCount { expected: usize, found: usize },
    ChannelOrder { position: usize, expected: Channel, found: Channel },
    GridMismatch { channel: Channel },
    ValueCount { channel: Channel, expected: usize, found: usize },
    NonFinite { channel: Channel, count: usize, first: (usize, usize) },
    OutOfRange { channel: Channel, min: f32, max: f32, count: usize, worst: f32 },
}

impl Issue {
    /// Hard issues make a state unusable; range violations are advisory.
    pub fn is_hard(&self) -> bool {
        !matches!(self, Issue::OutOfRange { .. })
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Issue::ChannelCount { expected, found } => {
                write!(f, "channel count {found}, expected {expected}")
            }
            Issue::ChannelOrder { position, expected, found } => {
                write!(f, "channel {position} is {found}, expected {expected}")
            }
            Issue::GridMismatch { channel } => write!(f, "{channel}: grid differs from state grid"),
            Issue::ValueCount { channel, expected, found } => {
                write!(f, "{channel}: {found} values, expected {expected}")
            }
            Issue::NonFinite { channel, count, first } => {
                write!(f, "{channel}: {count} non-finite values, first at {first:?}")
            }
            Issue::OutOfRange { channel, min, max, count, worst } => {
                write!(f, "{channel}: {count} values outside [{min}, {max}], worst {worst}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_hard_errors(&self) -> bool {
        self.issues.iter().any(Issue::is_hard)
    }

    pub fn hard(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.is_hard())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("clean");
        }
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Validates with the ingestion defaults (ranges on).
pub fn validate_state(state: &StateSet) -> ValidationReport {
    validate_state_with(state, &ValidationOptions::ingestion())
}

pub fn validate_state_with(state: &StateSet, options: &ValidationOptions) -> ValidationReport {
    let mut issues = Vec::new();
    let grid = state.grid();
    if let Err(e) = grid.validate() {
        issues.push(Issue::InvalidGrid(e.to_string()));
    }
    let fields = state.fields();
    if fields.len() != N_CHANNELS {
        issues.push(Issue::ChannelCount { expected: N_CHANNELS, found: fields.len() });
    }
    for (position, (field, expected)) in fields.iter().zip(Channel::canonical()).enumerate() {
        let channel = field.channel();
        if channel != expected {
            issues.push(Issue::ChannelOrder { position, expected, found: channel });
        }
        if field.grid() != grid {
            issues.push(Issue::GridMismatch { channel });
        }
        let values = field.values();
        if values.len() != field.grid().len() {
            issues.push(Issue::ValueCount { channel, expected: field.grid().len(), found: values.len() });
            continue;
        }

        let mut non_finite = 0;
        let mut first = None;
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                non_finite += 1;
                first.get_or_insert(k);
            }
        }
        if let Some(k) = first {
            let nlon = field.grid().nlon;
            issues.push(Issue::NonFinite { channel, count: non_finite, first: (k / nlon, k % nlon) });
        }

        let Some(bounds) = options.ranges.and_then(|r| r.bounds(channel.variable())) else {
            continue;
        };
        let (min, max) = bounds;
        let mut count = 0;
        let mut worst = 0.0f32;
        let mut worst_excess = 0.0f32;
        for &v in values.iter().filter(|v| v.is_finite()) {
            let excess = (min - v).max(v - max);
            if excess > 0.0 {
                count += 1;
                if excess > worst_excess {
                    worst_excess = excess;
                    worst = v;
                }
            }
        }
        if count > 0 {
            issues.push(Issue::OutOfRange { channel, min, max, count, worst });
        }
    }
    ValidationReport { issues }
}
