//! Latitude-weighted RMSE and anomaly correlation over region masks.
//!
//! Weights are `cos(lat)` on the masked points, normalized to sum to one
//! over the mask, so the RMSE of a constant offset is the offset itself:
//!
//! ```text
//! RMSE = sqrt( Σ w (f - o)² )
//! ACC  = Σ w a_f a_o / sqrt( Σ w a_f² · Σ w a_o² ),   a = x - climatology
//! ```
//!
//! All sums are accumulated in f64.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Channel, GridError, GridSpec, RegionBox, Variable, N_CHANNELS};
use crate::splice::{region_mask, RegionMask};
use crate::state::{Field, StateSet};

/// Anomaly variance below which ACC is undefined.
pub const MIN_ANOMALY_VARIANCE: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("mask selects no points")]
    EmptyMask,
    #[error("fields are on different grids")]
    GridMismatch,
    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(Channel, Channel),
    #[error("degenerate anomaly: weighted {which} anomaly variance {variance:e} is below {MIN_ANOMALY_VARIANCE:e}")]
    DegenerateAnomaly { which: &'static str, variance: f64 },
    #[error("climatology: {0}")]
    Climatology(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Normalized latitude weights over the points of one mask, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct LatWeights {
    grid: GridSpec,
    points: Vec<(usize, f64)>,
}

impl LatWeights {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `(offset, weight)` for every masked point.
    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    /// Dense weights, zero outside the mask.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for &(k, w) in &self.points {
            out[k] = w;
        }
        out
    }

    fn check(&self, a: &Field, b: &Field) -> Result<(), VerifyError> {
        if a.grid() != b.grid() || *a.grid() != self.grid {
            return Err(VerifyError::GridMismatch);
        }
        if a.channel() != b.channel() {
            return Err(VerifyError::ChannelMismatch(a.channel(), b.channel()));
        }
        Ok(())
    }
}

fn cos_lat(lat: f64) -> f64 {
    if lat.abs() >= 90.0 {
        0.0
    } else {
        lat.to_radians().cos().max(0.0)
    }
}

/// Neumaier-compensated running sum; keeps million-point weighted sums
/// accurate to a few ulps.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

fn compensated(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    values.for_each(|v| acc.add(v));
    acc.total()
}

/// Cosine-latitude weights on the masked points of `mask`. A mask that only
/// touches the poles, where the cosine vanishes, gets uniform weights.
pub fn lat_weights(mask: &RegionMask) -> Result<LatWeights, VerifyError> {
    let grid = *mask.grid();
    let mut points = Vec::new();
    for (k, _) in mask.cells().iter().enumerate().filter(|(_, &c)| c) {
        points.push((k, cos_lat(grid.lat(k / grid.nlon))));
    }
    if points.is_empty() {
        return Err(VerifyError::EmptyMask);
    }
    let total = compensated(points.iter().map(|p| p.1));
    if total > 0.0 {
        points.iter_mut().for_each(|p| p.1 /= total);
    } else {
        let uniform = 1.0 / points.len() as f64;
        points.iter_mut().for_each(|p| p.1 = uniform);
    }
    Ok(LatWeights { grid, points })
}

pub fn rmse_weighted(forecast: &Field, truth: &Field, weights: &LatWeights) -> Result<f64, VerifyError> {
    weights.check(forecast, truth)?;
    let (f, o) = (forecast.values(), truth.values());
    let sum = compensated(weights.points.iter().map(|&(k, w)| {
        let d = f[k] as f64 - o[k] as f64;
        w * d * d
    }));
    Ok(sum.sqrt())
}

pub fn acc_weighted(
    forecast: &Field,
    truth: &Field,
    clim: &Field,
    weights: &LatWeights,
) -> Result<f64, VerifyError> {
    weights.check(forecast, truth)?;
    weights.check(forecast, clim)?;
    let (f, o, c) = (forecast.values(), truth.values(), clim.values());
    let (mut cross, mut var_f, mut var_o) =
        (CompensatedSum::default(), CompensatedSum::default(), CompensatedSum::default());
    for &(k, w) in &weights.points {
        let af = f[k] as f64 - c[k] as f64;
        let ao = o[k] as f64 - c[k] as f64;
        cross.add(w * af * ao);
        var_f.add(w * af * af);
        var_o.add(w * ao * ao);
    }
    let (cross, var_f, var_o) = (cross.total(), var_f.total(), var_o.total());
    if var_f < MIN_ANOMALY_VARIANCE {
        return Err(VerifyError::DegenerateAnomaly { which: "forecast", variance: var_f });
    }
    if var_o < MIN_ANOMALY_VARIANCE {
        return Err(VerifyError::DegenerateAnomaly { which: "truth", variance: var_o });
    }
    Ok((cross / (var_f * var_o).sqrt()).clamp(-1.0, 1.0))
}

/// Time-invariant mean state used to form anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    grid: GridSpec,
    fields: Vec<Field>,
}

impl Climatology {
    pub fn new(grid: GridSpec, fields: Vec<Field>) -> Result<Self, VerifyError> {
        if fields.len() != N_CHANNELS {
            return Err(VerifyError::Climatology(format!("{} channels, need {N_CHANNELS}", fields.len())));
        }
        for (f, c) in fields.iter().zip(Channel::canonical()) {
            if f.channel() != c {
                return Err(VerifyError::Climatology(format!("found {} where {c} belongs", f.channel())));
            }
            if *f.grid() != grid {
                return Err(VerifyError::Climatology(format!("{c} is on a different grid")));
            }
        }
        Ok(Climatology { grid, fields })
    }

    /// A state archive doubles as a climatology; its time and label are ignored.
    pub fn from_state(state: StateSet) -> Self {
        let grid = *state.grid();
        Climatology { grid, fields: state.into_fields() }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn field(&self, channel: Channel) -> &Field {
        &self.fields[channel.flat_index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "ACC")]
    Acc,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Rmse, Metric::Acc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE",
            Metric::Acc => "ACC",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RMSE" => Ok(Metric::Rmse),
            "ACC" => Ok(Metric::Acc),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// One row of the metric table. Values are in storage units.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub init_time: DateTime<Utc>,
    pub source: String,
    pub channel: Channel,
    pub region: String,
    pub lead_hours: u32,
    pub metric: Metric,
    pub value: f64,
}

impl MetricRecord {
    /// Ordering used for every table: source, variable and level (canonical
    /// channel order), region, lead, metric.
    pub fn sort_key(&self) -> (&str, usize, &str, u32, Metric) {
        (&self.source, self.channel.flat_index(), &self.region, self.lead_hours, self.metric)
    }
}

pub fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    #[serde(flatten)]
    pub region: RegionBox,
}

impl NamedRegion {
    pub fn new(name: impl Into<String>, region: RegionBox) -> Self {
        NamedRegion { name: name.into(), region }
    }
}

/// `global` and `east_asia`.
pub fn default_regions() -> Vec<NamedRegion> {
    vec![
        NamedRegion::new("global", RegionBox::globe()),
        NamedRegion::new("east_asia", RegionBox::east_asia()),
    ]
}

/// MSLP, T2, U10, V10, Q500, T500, U500, V500, Z500.
pub fn default_report_channels() -> Vec<Channel> {
    let s = |v| Channel::surface(v).expect("surface variable");
    let u = |v| Channel::upper(v, 500).expect("upper variable");
    vec![
        s(Variable::Mslp),
        s(Variable::T2),
        s(Variable::U10),
        s(Variable::V10),
        u(Variable::Q),
        u(Variable::T),
        u(Variable::U),
        u(Variable::V),
        u(Variable::Z),
    ]
}

/// Region weights prepared once per evaluation grid.
#[derive(Debug, Clone)]
pub struct PreparedRegions {
    regions: Vec<(String, LatWeights)>,
}

impl PreparedRegions {
    pub fn new(grid: &GridSpec, regions: &[NamedRegion]) -> Result<Self, VerifyError> {
        let regions = regions
            .iter()
            .map(|r| {
                r.region.validate()?;
                Ok((r.name.clone(), lat_weights(&region_mask(grid, &r.region))?))
            })
            .collect::<Result<_, VerifyError>>()?;
        Ok(PreparedRegions { regions })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LatWeights)> {
        self.regions.iter().map(|(n, w)| (n.as_str(), w))
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// A lead whose metrics could not (all) be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadError {
    pub lead_hours: u32,
    pub message: String,
}

/// All metrics for one forecast/truth pair. Failures of individual metrics
/// are returned alongside the records that did succeed.
pub fn evaluate_lead(
    forecast: &StateSet,
    truth: &StateSet,
    clim: &Climatology,
    regions: &PreparedRegions,
    channels: &[Channel],
    init_time: DateTime<Utc>,
    lead_hours: u32,
) -> (Vec<MetricRecord>, Vec<LeadError>) {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    if forecast.grid() != truth.grid() || forecast.grid() != clim.grid() {
        errors.push(LeadError {
            lead_hours,
            message: format!(
                "grid mismatch: forecast {} / truth {} / climatology {}",
                forecast.grid(),
                truth.grid(),
                clim.grid()
            ),
        });
        return (records, errors);
    }
    for &channel in channels {
        let (f, o, c) = (forecast.field(channel), truth.field(channel), clim.field(channel));
        for (region, weights) in regions.iter() {
            let results = [
                (Metric::Rmse, rmse_weighted(f, o, weights)),
                (Metric::Acc, acc_weighted(f, o, c, weights)),
            ];
            for (metric, result) in results {
                match result {
                    Ok(value) => records.push(MetricRecord {
                        init_time,
                        source: forecast.source_label().to_string(),
                        channel,
                        region: region.to_string(),
                        lead_hours,
                        metric,
                        value,
                    }),
                    Err(e) => errors.push(LeadError {
                        lead_hours,
                        message: format!("{channel} {region} {metric}: {e}"),
                    }),
                }
            }
        }
    }
    (records, errors)
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub records: Vec<MetricRecord>,
    pub errors: Vec<LeadError>,
}

/// Scores a forecast series against truths keyed by lead. Leads without a
/// truth are reported as errors; the rest are still scored.
pub fn evaluate_run(
    forecasts: &[(u32, StateSet)],
    truths: &BTreeMap<u32, StateSet>,
    clim: &Climatology,
    regions: &[NamedRegion],
    channels: &[Channel],
) -> Result<Evaluation, VerifyError> {
    let prepared = PreparedRegions::new(clim.grid(), regions)?;
    let mut out = Evaluation::default();
    for (lead, forecast) in forecasts {
        let Some(truth) = truths.get(lead) else {
            out.errors.push(LeadError { lead_hours: *lead, message: "no truth state for this lead".into() });
            continue;
        };
        let init = forecast.valid_time() - Duration::hours(*lead as i64);
        let (records, errors) = evaluate_lead(forecast, truth, clim, &prepared, channels, init, *lead);
        out.records.extend(records);
        out.errors.extend(errors);
    }
    sort_records(&mut out.records);
    Ok(out)
}
