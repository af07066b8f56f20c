//! Autoregressive rollout: chain fixed-horizon forecast steps out to a lead.
//!
//! External backends are driven through a small subprocess protocol:
//!
//! ```text
//! <command...> --in <input.nws> --out <output.nws> --step-hours <H>
//! ```
//!
//! The command reads the input archive, writes the forecast for lead `H` as
//! an archive on the same grid and exits 0. Any other exit status is a
//! failure; stderr is kept in the rollout log.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldio::{self, ArchiveError};
use crate::grid::GridSpec;
use crate::state::StateSet;
use crate::validate::{validate_state_with, ValidationOptions};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("lead {lead} h cannot be composed from horizons {horizons:?}")]
    Unreachable { lead: u32, horizons: Vec<u32> },
    #[error("invalid horizons {0:?}: need a nonempty set of positive hours")]
    BadHorizons(Vec<u32>),
    #[error("emit lead {0} h is not reached by the plan")]
    EmitLead(u32),
    #[error("initial state is on {found}, backend requires {required}")]
    WrongGrid { found: GridSpec, required: GridSpec },
    #[error("step {step} ({hours} h) failed: {source}")]
    Step { step: usize, hours: u32, source: BackendError },
    #[error("step {step} produced an invalid state: {report}")]
    InvalidOutput { step: usize, report: String },
    #[error("backend spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("could not launch `{command}`: {source}")]
    Launch { command: String, source: std::io::Error },
    #[error("backend exited with {status}; stderr: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("unsupported step of {0} h")]
    UnsupportedStep(u32),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Ordered step sizes (hours) summing to the requested lead.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RolloutPlan {
    steps: Vec<u32>,
}

impl RolloutPlan {
    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    pub fn total(&self) -> u32 {
        self.steps.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Lead reached after each step, starting with 0 before the first.
    pub fn cumulative(&self) -> Vec<u32> {
        let mut acc = 0;
        std::iter::once(0)
            .chain(self.steps.iter().map(|s| {
                acc += s;
                acc
            }))
            .collect()
    }
}

/// Decomposes `lead` largest-horizon-first. When the greedy pass dead-ends
/// (e.g. 6 h from {5, 3}) the fewest-step decomposition is used instead.
pub fn schedule_steps(lead: u32, horizons: &[u32]) -> Result<RolloutPlan, RolloutError> {
    let set: BTreeSet<u32> = horizons.iter().copied().collect();
    if set.is_empty() || set.contains(&0) {
        return Err(RolloutError::BadHorizons(horizons.to_vec()));
    }
    let desc: Vec<u32> = set.iter().rev().copied().collect();
    let mut steps = Vec::new();
    let mut remaining = lead;
    while remaining > 0 {
        match desc.iter().find(|&&h| h <= remaining) {
            Some(&h) => {
                steps.push(h);
                remaining -= h;
            }
            None => break,
        }
    }
    if remaining == 0 {
        return Ok(RolloutPlan { steps });
    }
    fewest_steps(lead, &desc)
        .map(|steps| RolloutPlan { steps })
        .ok_or_else(|| RolloutError::Unreachable { lead, horizons: horizons.to_vec() })
}

fn fewest_steps(lead: u32, desc: &[u32]) -> Option<Vec<u32>> {
    let n = lead as usize;
    let mut best: Vec<Option<(u32, u32)>> = vec![None; n + 1];
    best[0] = Some((0, 0));
    for total in 1..=n {
        for &h in desc {
            let h_us = h as usize;
            if h_us > total {
                continue;
            }
            if let Some((count, _)) = best[total - h_us] {
                if best[total].is_none_or(|(c, _)| count + 1 < c) {
                    best[total] = Some((count + 1, h));
                }
            }
        }
    }
    best[n]?;
    let mut steps = Vec::new();
    let mut total = n;
    while total > 0 {
        let (_, h) = best[total].expect("reachable totals chain back to 0");
        steps.push(h);
        total -= h as usize;
    }
    steps.sort_unstable_by(|a, b| b.cmp(a));
    Some(steps)
}

/// Surrogate models that need no external process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    Persistence,
    /// Circular eastward shift of `cells_per_step` columns per `step_hours`.
    Advection { cells_per_step: i64, step_hours: u32 },
}

/// One builtin step of `hours`.
pub fn builtin_step(state: &StateSet, kind: BuiltinKind, hours: u32) -> StateSet {
    let valid_time = state.valid_time() + Duration::hours(hours as i64);
    let mut out = state.clone().with_valid_time(valid_time);
    if let BuiltinKind::Advection { cells_per_step, step_hours } = kind {
        let nlon = state.grid().nlon;
        let shift = (cells_per_step * hours as i64 / step_hours.max(1) as i64).rem_euclid(nlon as i64);
        if shift != 0 {
            for field in out.fields_mut() {
                for row in field.values_mut().chunks_mut(nlon) {
                    row.rotate_right(shift as usize);
                }
            }
        }
    }
    out
}

/// Anything that advances a state by one of its supported horizons.
pub trait ForecastBackend: Send {
    fn describe(&self) -> String;

    fn horizons(&self) -> Vec<u32>;

    /// Grid the backend insists on, if any.
    fn required_grid(&self) -> Option<GridSpec> {
        None
    }

    fn step(&mut self, state: &StateSet, hours: u32) -> Result<StateSet, BackendError>;

    /// Log lines gathered since the last call.
    fn drain_log(&mut self) -> Vec<String> {
        Vec::new()
    }
}

pub struct BuiltinBackend {
    kind: BuiltinKind,
    horizons: Vec<u32>,
}

impl BuiltinBackend {
    pub fn new(kind: BuiltinKind, horizons: Vec<u32>) -> Self {
        BuiltinBackend { kind, horizons }
    }
}

impl ForecastBackend for BuiltinBackend {
    fn describe(&self) -> String {
        format!("builtin {:?}", self.kind)
    }

    fn horizons(&self) -> Vec<u32> {
        self.horizons.clone()
    }

    fn step(&mut self, state: &StateSet, hours: u32) -> Result<StateSet, BackendError> {
        if !self.horizons.contains(&hours) {
            return Err(BackendError::UnsupportedStep(hours));
        }
        Ok(builtin_step(state, self.kind, hours))
    }
}

/// Runs an external command per step in a private scratch directory.
pub struct ExternalBackend {
    command: Vec<String>,
    horizons: Vec<u32>,
    required_grid: Option<GridSpec>,
    scratch: tempfile::TempDir,
    calls: usize,
    log: Vec<String>,
}

impl ExternalBackend {
    pub fn new(
        command: Vec<String>,
        horizons: Vec<u32>,
        required_grid: Option<GridSpec>,
    ) -> Result<Self, BackendError> {
        if command.is_empty() {
            return Err(BackendError::Malformed("empty command".into()));
        }
        let scratch = tempfile::Builder::new()
            .prefix("nwph-backend-")
            .tempdir()
            .map_err(|source| BackendError::Launch { command: command.join(" "), source })?;
        Ok(ExternalBackend { command, horizons, required_grid, scratch, calls: 0, log: Vec::new() })
    }

    fn paths(&self) -> (PathBuf, PathBuf) {
        let dir = self.scratch.path();
        (
            dir.join(format!("step{:04}_in.{}", self.calls, fieldio::EXTENSION)),
            dir.join(format!("step{:04}_out.{}", self.calls, fieldio::EXTENSION)),
        )
    }
}

impl ForecastBackend for ExternalBackend {
    fn describe(&self) -> String {
        format!("external `{}`", self.command.join(" "))
    }

    fn horizons(&self) -> Vec<u32> {
        self.horizons.clone()
    }

    fn required_grid(&self) -> Option<GridSpec> {
        self.required_grid
    }

    fn step(&mut self, state: &StateSet, hours: u32) -> Result<StateSet, BackendError> {
        if !self.horizons.contains(&hours) {
            return Err(BackendError::UnsupportedStep(hours));
        }
        self.calls += 1;
        let (input, output) = self.paths();
        fieldio::save_archive(&input, state)?;
        let result = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg("--in")
            .arg(&input)
            .arg("--out")
            .arg(&output)
            .arg("--step-hours")
            .arg(hours.to_string())
            .current_dir(self.scratch.path())
            .output()
            .map_err(|source| BackendError::Launch { command: self.command.join(" "), source })?;
        let stderr = String::from_utf8_lossy(&result.stderr).trim_end().to_string();
        if !stderr.is_empty() {
            self.log.extend(stderr.lines().map(|l| format!("[backend call {}] {l}", self.calls)));
        }
        let _ = std::fs::remove_file(&input);
        if !result.status.success() {
            let _ = std::fs::remove_file(&output);
            return Err(BackendError::Failed { status: result.status.to_string(), stderr });
        }
        let next = fieldio::load_archive(&output).map_err(|e| BackendError::Malformed(e.to_string()));
        let _ = std::fs::remove_file(&output);
        next
    }

    fn drain_log(&mut self) -> Vec<String> {
        std::mem::take(&mut self.log)
    }
}

fn default_horizons() -> Vec<u32> {
    vec![24]
}

fn yes() -> bool {
    true
}

/// Declarative backend choice, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    Persistence {
        #[serde(default = "default_horizons")]
        horizons: Vec<u32>,
    },
    /// Shifts `cells_per_step` columns per smallest horizon.
    Advection {
        cells_per_step: i64,
        #[serde(default = "default_horizons")]
        horizons: Vec<u32>,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_horizons")]
        horizons: Vec<u32>,
        #[serde(default = "yes")]
        require_canonical_grid: bool,
    },
}

impl BackendSpec {
    pub fn horizons(&self) -> &[u32] {
        match self {
            BackendSpec::Persistence { horizons }
            | BackendSpec::Advection { horizons, .. }
            | BackendSpec::External { horizons, .. } => horizons,
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        let h = self.horizons();
        if h.is_empty() || h.contains(&0) {
            return Err(RolloutError::BadHorizons(h.to_vec()));
        }
        match self {
            BackendSpec::Advection { horizons, .. } => {
                let base = *horizons.iter().min().expect("nonempty");
                if horizons.iter().any(|h| h % base != 0) {
                    return Err(RolloutError::Spec(format!(
                        "advection horizons {horizons:?} must be multiples of the smallest"
                    )));
                }
            }
            BackendSpec::External { command, .. } if command.is_empty() => {
                return Err(RolloutError::Spec("external backend needs a command".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ForecastBackend>, RolloutError> {
        self.validate()?;
        Ok(match self {
            BackendSpec::Persistence { horizons } => {
                Box::new(BuiltinBackend::new(BuiltinKind::Persistence, horizons.clone()))
            }
            BackendSpec::Advection { cells_per_step, horizons } => {
                let step_hours = *horizons.iter().min().expect("validated");
                let kind = BuiltinKind::Advection { cells_per_step: *cells_per_step, step_hours };
                Box::new(BuiltinBackend::new(kind, horizons.clone()))
            }
            BackendSpec::External { command, horizons, require_canonical_grid } => {
                let grid = require_canonical_grid.then(GridSpec::canonical);
                let backend = ExternalBackend::new(command.clone(), horizons.clone(), grid)
                    .map_err(|e| RolloutError::Spec(e.to_string()))?;
                Box::new(backend)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutOptions {
    /// Run the first step twice and compare archive digests.
    pub verify_determinism: bool,
}

/// Log and warnings from a finished rollout.
#[derive(Debug, Clone, Default)]
pub struct RolloutLog {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

/// Streams every emitted `(lead, state)` into `sink` as soon as it exists,
/// so long rollouts never hold more than two states.
pub fn run_rollout_streaming(
    ic: &StateSet,
    backend: &mut dyn ForecastBackend,
    plan: &RolloutPlan,
    emit_leads: &[u32],
    options: RolloutOptions,
    mut sink: impl FnMut(u32, StateSet),
) -> Result<RolloutLog, RolloutError> {
    let reachable = plan.cumulative();
    if let Some(&bad) = emit_leads.iter().find(|l| !reachable.contains(l)) {
        return Err(RolloutError::EmitLead(bad));
    }
    if let Some(required) = backend.required_grid() {
        if *ic.grid() != required {
            return Err(RolloutError::WrongGrid { found: *ic.grid(), required });
        }
    }
    let emit: BTreeSet<u32> = emit_leads.iter().copied().collect();
    let mut log = RolloutLog::default();
    if emit.contains(&0) {
        sink(0, ic.clone());
    }
    let last_emit = emit.iter().next_back().copied().unwrap_or(0);
    let mut current = ic.clone();
    let mut lead = 0u32;
    for (k, &hours) in plan.steps().iter().enumerate() {
        if lead >= last_emit {
            break;
        }
        let step = k + 1;
        let mut next = backend
            .step(&current, hours)
            .map_err(|source| RolloutError::Step { step, hours, source })?;
        if options.verify_determinism && step == 1 {
            let again = backend
                .step(&current, hours)
                .map_err(|source| RolloutError::Step { step, hours, source })?;
            let (a, b) = (fieldio::state_digest(&next)?, fieldio::state_digest(&again)?);
            if a != b {
                let msg = format!("backend is not deterministic: step 1 digests {a} and {b} differ");
                log::warn!("{msg}");
                log.warnings.push(msg);
            } else {
                log.lines.push(format!("determinism check passed (sha256 {a})"));
            }
        }
        log.lines.extend(backend.drain_log());
        if next.grid() != current.grid() {
            return Err(RolloutError::Step {
                step,
                hours,
                source: BackendError::Malformed(format!("output grid {} differs from input", next.grid())),
            });
        }
        let report = validate_state_with(&next, &ValidationOptions::structural());
        if report.has_hard_errors() {
            return Err(RolloutError::InvalidOutput { step, report: report.to_string() });
        }
        lead += hours;
        next = next
            .with_valid_time(ic.valid_time() + Duration::hours(lead as i64))
            .with_source_label(ic.source_label());
        log.lines.push(format!("step {step}: +{hours} h -> lead {lead} h"));
        if emit.contains(&lead) {
            sink(lead, next.clone());
        }
        current = next;
    }
    Ok(log)
}

/// Collects the emitted series in lead order.
pub fn run_rollout(
    ic: &StateSet,
    backend: &mut dyn ForecastBackend,
    plan: &RolloutPlan,
    emit_leads: &[u32],
    options: RolloutOptions,
) -> Result<(Vec<(u32, StateSet)>, RolloutLog), RolloutError> {
    let mut series = Vec::new();
    let log = run_rollout_streaming(ic, backend, plan, emit_leads, options, |lead, s| series.push((lead, s)))?;
    Ok((series, log))
}
