use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Duration, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use nwp_harness::expt::{run_experiment, ConfigFile, ExptError};
use nwp_harness::fieldio::{self, ChannelOrder, NanPolicy, RawDumpLayout, ScanOrder};
use nwp_harness::grid::{Channel, GridSpec, RegionBox};
use nwp_harness::regrid::regrid_state;
use nwp_harness::report::write_metrics_csv;
use nwp_harness::rollout::{run_rollout_streaming, schedule_steps, BackendSpec, RolloutOptions};
use nwp_harness::splice::{splice_states, SpliceScope, SpliceSpec};
use nwp_harness::validate::validate_state;
use nwp_harness::verify::{
    default_regions, default_report_channels, evaluate_run, sort_records, Climatology, NamedRegion,
};
use nwp_harness::{plot, synth};

#[derive(Parser)]
#[command(name = "nwph", version, about = "Evaluate global weather models on spliced initial conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scan {
    NorthFirst,
    SouthFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    UpperOnly,
    AllChannels,
}

#[derive(Clone, Copy, ValueEnum)]
enum Nan {
    Error,
    Warn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Persistence,
    Advection,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a headerless float32 dump into an archive.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `canonical`, `global:<step>` or `nlat,nlon,lat_start,dlat,lon_start,dlon`.
        #[arg(long, default_value = "canonical", allow_hyphen_values = true)]
        grid: String,
        /// Valid time, RFC 3339.
        #[arg(long)]
        time: DateTime<Utc>,
        #[arg(long)]
        label: String,
        #[arg(long, value_enum, default_value = "north-first")]
        scan: Scan,
        /// Comma-separated plane order such as `Z500,T850`; canonical if omitted.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<Channel>,
        #[arg(long, value_enum, default_value = "error")]
        nan: Nan,
    },
    /// Bilinearly interpolate an archive onto another grid.
    Regrid {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "canonical", allow_hyphen_values = true)]
        grid: String,
    },
    /// Replace a box of the base state with the donor state.
    Splice {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        donor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `lat_min,lat_max,lon_min,lon_max`, degrees.
        #[arg(long = "box", default_value = "-10,60,60,150", allow_hyphen_values = true)]
        region: RegionBox,
        #[arg(long, value_enum, default_value = "upper-only")]
        scope: Scope,
        /// Feathering width outside the box, degrees.
        #[arg(long, default_value_t = 0.0)]
        blend: f64,
        #[arg(long)]
        allow_time_mismatch: bool,
    },
    /// Roll a state forward and write one archive per requested lead.
    Rollout {
        #[arg(long)]
        ic: PathBuf,
        /// Output path pattern containing `{lead}`.
        #[arg(long)]
        out: String,
        #[arg(long, value_delimiter = ',', default_value = "24,48,72,96,120,144,168,192,216,240")]
        leads: Vec<u32>,
        #[arg(long, value_enum, default_value = "persistence")]
        backend: Builtin,
        #[arg(long, value_delimiter = ',', default_value = "24")]
        horizons: Vec<u32>,
        /// Columns moved per smallest horizon (advection backend).
        #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
        cells_per_step: i64,
        /// Skip the canonical-grid requirement of external backends.
        #[arg(long)]
        any_grid: bool,
        /// External command; receives `--in <path> --out <path> --step-hours <h>`.
        #[arg(last = true)]
        command: Vec<String>,
    },
    /// Score forecast archives against truth archives and write a metric table.
    Evaluate {
        /// Forecast path pattern containing `{lead}`.
        #[arg(long)]
        forecast: String,
        /// Truth path pattern containing `{lead}`.
        #[arg(long)]
        truth: String,
        #[arg(long)]
        climatology: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "24,48,72,96,120,144,168,192,216,240")]
        leads: Vec<u32>,
        /// Series label; defaults to the forecast's source label.
        #[arg(long)]
        source: Option<String>,
        /// Initialisation time; defaults to the first forecast's valid time minus its lead.
        #[arg(long)]
        init_time: Option<DateTime<Utc>>,
        #[arg(long, value_delimiter = ',')]
        channels: Vec<Channel>,
        /// Extra region as `name=lat_min,lat_max,lon_min,lon_max`; replaces the defaults.
        #[arg(long = "region", allow_hyphen_values = true)]
        regions: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw SVG line plots from a metric table.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print an archive header.
    Inspect {
        file: PathBuf,
        /// Also read the payload, validate it and print per-channel ranges.
        #[arg(long)]
        full: bool,
    },
    /// Write a synthetic state or climatology for testing.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "global:2.5", allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value = "2023-06-06T00:00:00Z")]
        time: DateTime<Utc>,
        #[arg(long, default_value = "synth")]
        label: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiple of the per-variable noise scale added on top.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Write the zonal-mean climatology instead of a state.
        #[arg(long)]
        climatology: bool,
    },
}

fn parse_grid(text: &str) -> Result<GridSpec> {
    if text == "canonical" {
        return Ok(GridSpec::canonical());
    }
    if let Some(step) = text.strip_prefix("global:") {
        return Ok(GridSpec::global(step.parse().context("grid step")?)?);
    }
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 6 {
        bail!("grid `{text}`: expected canonical, global:<step> or six comma-separated numbers");
    }
    let n = |k: usize| parts[k].trim().parse::<usize>().with_context(|| format!("grid field {}", k + 1));
    let f = |k: usize| parts[k].trim().parse::<f64>().with_context(|| format!("grid field {}", k + 1));
    Ok(GridSpec::new(n(0)?, n(1)?, f(2)?, f(3)?, f(4)?, f(5)?)?)
}

fn pattern(p: &str, lead: u32) -> Result<PathBuf> {
    if !p.contains("{lead}") {
        bail!("path pattern `{p}` must contain {{lead}}");
    }
    Ok(PathBuf::from(p.replace("{lead}", &lead.to_string())))
}

fn inspect(path: &Path, full: bool) -> Result<()> {
    let h = fieldio::load_header(path)?;
    println!("file:         {}", path.display());
    println!("version:      {}", h.version);
    println!("grid:         {}", h.grid);
    match h.valid_time_utc() {
        Some(t) => println!("valid_time:   {}", t.to_rfc3339()),
        None => println!("valid_time:   {} (out of range)", h.valid_time),
    }
    println!("source_label: {}", h.source_label);
    println!("channels:     {}", h.channels.len());
    println!("header_bytes: {}", h.encoded_len());
    println!("payload:      {}", h.payload_len());
    if full {
        let state = fieldio::load_archive(path)?;
        for field in state.fields() {
            let (lo, hi) = field.min_max();
            println!("  {:<6} {lo:>14.6e} {hi:>14.6e}", field.channel().name());
        }
        println!("validation:   {}", validate_state(&state));
        println!("sha256:       {}", fieldio::state_digest(&state)?);
    }
    Ok(())
}

fn parse_region(text: &str) -> Result<NamedRegion> {
    let (name, bounds) = text.split_once('=').ok_or_else(|| anyhow!("region `{text}`: expected name=bounds"))?;
    Ok(NamedRegion::new(name, bounds.parse::<RegionBox>()?))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { input, out, grid, time, label, scan, channels, nan } => {
            let layout = RawDumpLayout {
                channels: if channels.is_empty() { ChannelOrder::Canonical } else { ChannelOrder::Explicit(channels) },
                scan: match scan {
                    Scan::NorthFirst => ScanOrder::NorthFirst,
                    Scan::SouthFirst => ScanOrder::SouthFirst,
                },
                ..Default::default()
            };
            let nan = match nan {
                Nan::Error => NanPolicy::Error,
                Nan::Warn => NanPolicy::Warn,
            };
            let state = fieldio::ingest_raw(&input, parse_grid(&grid)?, &layout, time, &label, nan)?;
            let report = validate_state(&state);
            if !report.is_clean() {
                log::warn!("{}: {report}", input.display());
            }
            fieldio::save_archive(&out, &state)?;
        }
        Command::Regrid { input, out, grid } => {
            let state = fieldio::load_archive(&input)?;
            fieldio::save_archive(&out, &regrid_state(&state, &parse_grid(&grid)?)?)?;
        }
        Command::Splice { base, donor, out, region, scope, blend, allow_time_mismatch } => {
            let spec = SpliceSpec {
                region,
                scope: match scope {
                    Scope::UpperOnly => SpliceScope::UpperOnly,
                    Scope::AllChannels => SpliceScope::AllChannels,
                },
                blend_width: blend,
                allow_time_mismatch,
            };
            let base = fieldio::load_archive(&base)?;
            let donor = fieldio::load_archive(&donor)?;
            fieldio::save_archive(&out, &splice_states(&base, &donor, &spec)?)?;
        }
        Command::Rollout { ic, out, leads, backend, horizons, cells_per_step, any_grid, command } => {
            let spec = match backend {
                Builtin::Persistence => BackendSpec::Persistence { horizons },
                Builtin::Advection => BackendSpec::Advection { cells_per_step, horizons },
                Builtin::External => {
                    BackendSpec::External { command, horizons, require_canonical_grid: !any_grid }
                }
            };
            spec.validate()?;
            let ic = fieldio::load_archive(&ic)?;
            let mut emit = leads;
            emit.sort_unstable();
            emit.dedup();
            let last = *emit.last().ok_or_else(|| anyhow!("no leads"))?;
            let plan = schedule_steps(last, spec.horizons())?;
            let mut backend = spec.build()?;
            let mut failure = None;
            let log = run_rollout_streaming(&ic, backend.as_mut(), &plan, &emit, RolloutOptions::default(), |lead, s| {
                if failure.is_some() {
                    return;
                }
                let written = pattern(&out, lead).and_then(|p| Ok(fieldio::save_archive(&p, &s)?));
                if let Err(e) = written {
                    failure = Some(e);
                }
            });
            for line in backend.drain_log() {
                log::info!("backend: {line}");
            }
            let log = log?;
            for w in log.warnings {
                log::warn!("{w}");
            }
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Command::Evaluate { forecast, truth, climatology, leads, source, init_time, channels, regions, out } => {
            let clim = Climatology::from_state(fieldio::load_archive(&climatology)?);
            let mut forecasts = Vec::new();
            let mut truths = BTreeMap::new();
            for &lead in &leads {
                forecasts.push((lead, fieldio::load_archive(pattern(&forecast, lead)?)?));
                truths.insert(lead, fieldio::load_archive(pattern(&truth, lead)?)?);
            }
            let (first_lead, first) = forecasts.first().ok_or_else(|| anyhow!("no leads"))?;
            let label = source.unwrap_or_else(|| first.source_label().to_string());
            let init = init_time.unwrap_or_else(|| first.valid_time() - Duration::hours(*first_lead as i64));
            let channels = if channels.is_empty() { default_report_channels() } else { channels };
            let regions = if regions.is_empty() {
                default_regions()
            } else {
                regions.iter().map(|r| parse_region(r)).collect::<Result<_>>()?
            };
            let evaluation = evaluate_run(&forecasts, &truths, &clim, &regions, &channels)?;
            let mut records = evaluation.records;
            for r in &mut records {
                r.source = label.clone();
                r.init_time = init;
            }
            sort_records(&mut records);
            let file = std::fs::File::create(&out).with_context(|| out.display().to_string())?;
            write_metrics_csv(&records, std::io::BufWriter::new(file))?;
            if !evaluation.errors.is_empty() {
                for e in &evaluation.errors {
                    eprintln!("lead {} h: {}", e.lead_hours, e.message);
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Run { config } => {
            let file = match ConfigFile::load(&config) {
                Ok(f) => f,
                Err(e @ (ExptError::Io { .. } | ExptError::Parse(_) | ExptError::Config(_))) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            };
            let report = run_experiment(&file)?;
            for run in &report.runs {
                println!("{:<24} {:<6} {} records", run.label, if run.ok { "ok" } else { "FAILED" }, run.records);
            }
            println!("metrics: {}", report.metrics_csv.display());
            println!("plots:   {}", report.plots.len());
            println!("config:  sha256 {}", report.config_hash);
            if !report.all_ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Plot { csv, out_dir } => {
            let files = plot::emit_plots(&csv, &out_dir)?;
            println!("{} plots in {}", files.len(), out_dir.display());
        }
        Command::Inspect { file, full } => inspect(&file, full)?,
        Command::Synth { out, grid, time, label, seed, noise, climatology } => {
            let grid = parse_grid(&grid)?;
            let state = if climatology {
                let clim = synth::synthetic_climatology(grid);
                nwp_harness::StateSet::from_channels(time, label, grid, |c| clim.field(c).clone())?
            } else {
                let s = synth::synthetic_state(grid, time, &label, seed);
                if noise > 0.0 {
                    synth::add_noise(&s, noise, seed.wrapping_add(1))
                } else {
                    s
                }
            };
            fieldio::save_archive(&out, &state)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
