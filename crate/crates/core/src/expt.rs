//! Declarative experiments: every IC source and splice scenario is rolled
//! out with one backend and verified against a truth series.
//!
//! Configs are TOML, `version = 1`. Relative paths resolve against the
//! directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fieldio::{self, ArchiveError, NanPolicy, RawDumpLayout};
use crate::grid::{Channel, GridSpec, RegionBox};
use crate::plot::{self, PlotError};
use crate::regrid::regrid_state;
use crate::report::{write_metrics_csv, ReportError};
use crate::rollout::{run_rollout_streaming, schedule_steps, BackendSpec, RolloutOptions};
use crate::splice::{splice_label, splice_states, SpliceScope, SpliceSpec};
use crate::state::StateSet;
use crate::validate::{validate_state_with, RangeChecks, ValidationOptions};
use crate::verify::{
    default_regions, default_report_channels, evaluate_lead, sort_records, Climatology, MetricRecord,
    NamedRegion, PreparedRegions,
};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "NWPH_WORKERS";

pub const METRICS_FILE: &str = "metrics.csv";
pub const LOG_FILE: &str = "runs.log";
pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";
pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Error)]
pub enum ExptError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("climatology: {0}")]
    Climatology(String),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExptError + '_ {
    move |source| ExptError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    #[default]
    Archive,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcSource {
    pub label: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: SourceFormat,
    /// Required for raw dumps; archives carry their own grid.
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub layout: RawDumpLayout,
    #[serde(default)]
    pub nan_policy: NanPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpliceScenario {
    /// Defaults to `<donor>pad<base>`.
    pub label: Option<String>,
    pub base: String,
    pub donor: String,
    #[serde(default = "RegionBox::east_asia")]
    pub region: RegionBox,
    #[serde(default)]
    pub scope: SpliceScope,
    #[serde(default)]
    pub blend_width: f64,
    #[serde(default)]
    pub allow_time_mismatch: bool,
}

impl SpliceScenario {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| splice_label(&self.base, &self.donor))
    }

    pub fn spec(&self) -> SpliceSpec {
        SpliceSpec {
            region: self.region,
            scope: self.scope,
            blend_width: self.blend_width,
            allow_time_mismatch: self.allow_time_mismatch,
        }
    }
}

fn default_leads() -> Vec<u32> {
    (1..=10).map(|k| 24 * k).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub init_time: DateTime<Utc>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub climatology: PathBuf,
    /// Truth archive path with `{lead}` standing for the lead in hours.
    pub truth: String,
    #[serde(default = "default_leads")]
    pub lead_hours: Vec<u32>,
    #[serde(default = "default_report_channels")]
    pub report_channels: Vec<Channel>,
    #[serde(default = "default_regions")]
    pub regions: Vec<NamedRegion>,
    /// Every IC, truth and climatology state is brought onto this grid.
    #[serde(default = "GridSpec::canonical")]
    pub target_grid: GridSpec,
    /// Concurrent runs; falls back to `NWPH_WORKERS`, then the CPU count.
    pub workers: Option<usize>,
    /// Treat out-of-range IC values as run failures instead of warnings.
    #[serde(default)]
    pub strict_ranges: bool,
    pub backend: BackendSpec,
    #[serde(default)]
    pub ic_sources: Vec<IcSource>,
    #[serde(default)]
    pub splice_scenarios: Vec<SpliceScenario>,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExptError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Run labels in execution order: sources, then scenarios.
    pub fn run_labels(&self) -> Vec<String> {
        self.ic_sources
            .iter()
            .map(|s| s.label.clone())
            .chain(self.splice_scenarios.iter().map(SpliceScenario::label))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ExptError> {
        let bad = |m: String| Err(ExptError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.name.trim().is_empty() {
            return bad("name is empty".into());
        }
        if self.ic_sources.is_empty() {
            return bad("no ic_sources".into());
        }
        let mut seen = BTreeSet::new();
        for label in self.run_labels() {
            if label.is_empty() || label.contains([',', '"', '\n', '/']) {
                return bad(format!("label `{label}` is empty or has forbidden characters"));
            }
            if !seen.insert(label.clone()) {
                return bad(format!("label `{label}` is used twice"));
            }
        }
        let sources: BTreeSet<&str> = self.ic_sources.iter().map(|s| s.label.as_str()).collect();
        for source in &self.ic_sources {
            if source.format == SourceFormat::Raw {
                let Some(grid) = source.grid else {
                    return bad(format!("raw source `{}` needs a grid", source.label));
                };
                grid.validate().map_err(|e| ExptError::Config(format!("source `{}`: {e}", source.label)))?;
            }
        }
        for scenario in &self.splice_scenarios {
            for reference in [&scenario.base, &scenario.donor] {
                if !sources.contains(reference.as_str()) {
                    return bad(format!("scenario `{}` names unknown source `{reference}`", scenario.label()));
                }
            }
            scenario
                .region
                .validate()
                .map_err(|e| ExptError::Config(format!("scenario `{}`: {e}", scenario.label())))?;
            if !(scenario.blend_width.is_finite() && scenario.blend_width >= 0.0) {
                return bad(format!("scenario `{}`: blend_width must be >= 0", scenario.label()));
            }
        }
        if self.lead_hours.is_empty() {
            return bad("lead_hours is empty".into());
        }
        let unique: BTreeSet<u32> = self.lead_hours.iter().copied().collect();
        if unique.len() != self.lead_hours.len() {
            return bad("lead_hours has duplicates".into());
        }
        self.backend.validate().map_err(|e| ExptError::Config(e.to_string()))?;
        let g = self.backend.horizons().iter().fold(0, |acc, &h| gcd(acc, h));
        if let Some(lead) = self.lead_hours.iter().find(|&&l| g == 0 || l % g != 0) {
            return bad(format!("lead {lead} h is not a multiple of {g} h, the gcd of the backend horizons"));
        }
        if self.report_channels.is_empty() {
            return bad("report_channels is empty".into());
        }
        if self.regions.is_empty() {
            return bad("regions is empty".into());
        }
        let mut names = BTreeSet::new();
        for region in &self.regions {
            if !names.insert(region.name.as_str()) {
                return bad(format!("region `{}` is defined twice", region.name));
            }
            region.region.validate().map_err(|e| ExptError::Config(format!("region `{}`: {e}", region.name)))?;
        }
        self.target_grid.validate().map_err(|e| ExptError::Config(format!("target_grid: {e}")))?;
        if !self.truth.contains("{lead}") {
            return bad("truth pattern must contain `{lead}`".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn truth_path(&self, lead_hours: u32) -> String {
        self.truth.replace("{lead}", &lead_hours.to_string())
    }
}

/// A parsed config together with its exact text and home directory.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub config: ExperimentConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(text, base_dir)
    }

    pub fn from_text(text: String, base_dir: impl Into<PathBuf>) -> Result<Self, ExptError> {
        let config = ExperimentConfig::parse(&text)?;
        Ok(ConfigFile { config, text, base_dir: base_dir.into() })
    }

    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn snapshot_hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub ok: bool,
    pub records: usize,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics_csv: PathBuf,
    pub log_file: PathBuf,
    pub snapshot: PathBuf,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
    pub plots: Vec<PathBuf>,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }
}

fn load_on_grid(path: &Path, grid: &GridSpec) -> Result<StateSet, String> {
    let state = fieldio::load_archive(path).map_err(|e| e.to_string())?;
    regrid_state(&state, grid).map_err(|e| format!("{}: {e}", path.display()))
}

fn prepare_source(file: &ConfigFile, source: &IcSource, log: &mut Vec<String>) -> Result<StateSet, String> {
    let config = &file.config;
    let path = file.resolve(&source.path);
    let state = match source.format {
        SourceFormat::Archive => fieldio::load_archive(&path).map_err(|e| e.to_string())?,
        SourceFormat::Raw => {
            let grid = source.grid.expect("validated");
            fieldio::ingest_raw(&path, grid, &source.layout, config.init_time, &source.label, source.nan_policy)
                .map_err(|e: ArchiveError| e.to_string())?
        }
    };
    if state.valid_time() != config.init_time {
        return Err(format!(
            "IC valid time {} differs from init_time {}",
            state.valid_time().to_rfc3339(),
            config.init_time.to_rfc3339()
        ));
    }
    let state = regrid_state(&state, &config.target_grid).map_err(|e| e.to_string())?;
    let report = validate_state_with(&state, &ValidationOptions { ranges: Some(RangeChecks::default()) });
    if report.has_hard_errors() || (config.strict_ranges && !report.is_clean()) {
        return Err(format!("IC failed validation: {report}"));
    }
    for issue in &report.issues {
        log.push(format!("warning: {issue}"));
    }
    Ok(state.with_source_label(source.label.clone()))
}

struct Shared<'a> {
    file: &'a ConfigFile,
    climatology: Climatology,
    regions: PreparedRegions,
    emit: Vec<u32>,
}

fn execute_run(shared: &Shared<'_>, label: &str, ic: &StateSet, log: &mut Vec<String>) -> (Vec<MetricRecord>, bool) {
    let config = &shared.file.config;
    let max_lead = *shared.emit.last().expect("leads validated non-empty");
    let plan = match schedule_steps(max_lead, config.backend.horizons()) {
        Ok(plan) => plan,
        Err(e) => {
            log.push(format!("error: {e}"));
            return (Vec::new(), false);
        }
    };
    let mut backend = match config.backend.build() {
        Ok(b) => b,
        Err(e) => {
            log.push(format!("error: {e}"));
            return (Vec::new(), false);
        }
    };
    log.push(format!("backend {} plan {:?}", backend.describe(), plan.steps()));
    let ic = ic.clone().with_source_label(label);
    let mut records = Vec::new();
    let mut ok = true;
    let mut lead_log = Vec::new();
    let result =
        run_rollout_streaming(&ic, backend.as_mut(), &plan, &shared.emit, RolloutOptions::default(), |lead, forecast| {
            let truth_path = shared.file.resolve(config.truth_path(lead));
            let truth = match load_on_grid(&truth_path, &config.target_grid) {
                Ok(t) => t,
                Err(e) => {
                    ok = false;
                    lead_log.push(format!("error: lead {lead} h: truth: {e}"));
                    return;
                }
            };
            let (recs, errs) = evaluate_lead(
                &forecast,
                &truth,
                &shared.climatology,
                &shared.regions,
                &config.report_channels,
                config.init_time,
                lead,
            );
            for e in errs {
                ok = false;
                lead_log.push(format!("error: lead {} h: {}", e.lead_hours, e.message));
            }
            lead_log.push(format!("lead {lead} h: {} records", recs.len()));
            records.extend(recs);
        });
    log.append(&mut lead_log);
    log.extend(backend.drain_log().into_iter().map(|l| format!("backend: {l}")));
    match result {
        Ok(rollout_log) => {
            log.extend(rollout_log.lines);
            log.extend(rollout_log.warnings.into_iter().map(|w| format!("warning: {w}")));
        }
        Err(e) => {
            ok = false;
            log.push(format!("error: rollout: {e}"));
        }
    }
    (records, ok)
}

fn worker_count(config: &ExperimentConfig) -> usize {
    config
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// A prepared IC (or why it is missing) and its preparation log.
type Prepared = (Result<Arc<StateSet>, String>, Vec<String>);

enum Job<'a> {
    Source(usize),
    Scenario(&'a SpliceScenario),
}

/// Runs the whole matrix and writes `metrics.csv`, `runs.log`, the config
/// snapshot and the plots under the output directory. Per-run failures are
/// reported in the returned summaries; only setup problems are errors.
pub fn run_experiment(file: &ConfigFile) -> Result<RunReport, ExptError> {
    let config = &file.config;
    config.validate()?;
    let out_dir = file.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let clim_path = file.resolve(&config.climatology);
    let clim_state = load_on_grid(&clim_path, &config.target_grid).map_err(ExptError::Climatology)?;
    let climatology = Climatology::from_state(clim_state);
    let regions = PreparedRegions::new(&config.target_grid, &config.regions)
        .map_err(|e| ExptError::Config(e.to_string()))?;
    let mut emit = config.lead_hours.clone();
    emit.sort_unstable();
    let shared = Shared { file, climatology, regions, emit };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(config))
        .build()
        .map_err(|e| ExptError::Config(format!("thread pool: {e}")))?;
    info!("experiment {}: {} runs", config.name, config.run_labels().len());

    let prepared: Vec<Prepared> = pool.install(|| {
        config
            .ic_sources
            .par_iter()
            .map(|source| {
                let mut log = Vec::new();
                let state = prepare_source(file, source, &mut log).map(Arc::new);
                (state, log)
            })
            .collect()
    });
    let by_label: BTreeMap<&str, usize> =
        config.ic_sources.iter().enumerate().map(|(k, s)| (s.label.as_str(), k)).collect();

    let jobs: Vec<Job> = (0..config.ic_sources.len())
        .map(Job::Source)
        .chain(config.splice_scenarios.iter().map(Job::Scenario))
        .collect();

    let outcomes: Vec<(RunSummary, Vec<MetricRecord>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut log = Vec::new();
                let (label, ic) = match job {
                    Job::Source(k) => {
                        let (state, prep_log) = &prepared[*k];
                        log.extend(prep_log.iter().cloned());
                        (config.ic_sources[*k].label.clone(), state.clone())
                    }
                    Job::Scenario(s) => {
                        let base = &prepared[by_label[s.base.as_str()]].0;
                        let donor = &prepared[by_label[s.donor.as_str()]].0;
                        let ic = match (base, donor) {
                            (Ok(b), Ok(d)) => splice_states(b, d, &s.spec()).map(Arc::new).map_err(|e| e.to_string()),
                            (Err(_), _) => Err(format!("base source `{}` unavailable", s.base)),
                            (_, Err(_)) => Err(format!("donor source `{}` unavailable", s.donor)),
                        };
                        (s.label(), ic)
                    }
                };
                let (records, ok) = match ic {
                    Ok(ic) => execute_run(&shared, &label, &ic, &mut log),
                    Err(e) => {
                        log.push(format!("error: {e}"));
                        (Vec::new(), false)
                    }
                };
                if ok {
                    info!("run {label}: {} records", records.len());
                } else {
                    warn!("run {label} failed");
                }
                let summary = RunSummary { label, ok, records: records.len(), messages: log };
                (summary, records)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut runs = Vec::new();
    for (summary, recs) in outcomes {
        records.extend(recs);
        runs.push(summary);
    }
    sort_records(&mut records);

    let metrics_csv = out_dir.join(METRICS_FILE);
    let file_out = std::fs::File::create(&metrics_csv).map_err(io_err(&metrics_csv))?;
    write_metrics_csv(&records, std::io::BufWriter::new(file_out))?;

    let log_file = out_dir.join(LOG_FILE);
    let mut text = String::new();
    let _ = writeln!(text, "experiment {}", config.name);
    let _ = writeln!(text, "config sha256 {}", file.snapshot_hash());
    for run in &runs {
        let _ = writeln!(text, "[{}] {} ({} records)", run.label, if run.ok { "ok" } else { "FAILED" }, run.records);
        for m in &run.messages {
            let _ = writeln!(text, "  {m}");
        }
    }
    std::fs::write(&log_file, text).map_err(io_err(&log_file))?;

    let snapshot = out_dir.join(SNAPSHOT_FILE);
    std::fs::write(&snapshot, file.text.as_bytes()).map_err(io_err(&snapshot))?;

    let plots = plot::emit_plots(&metrics_csv, &out_dir.join(PLOT_DIR))?;

    Ok(RunReport { metrics_csv, log_file, snapshot, config_hash: file.snapshot_hash(), runs, plots })
}
