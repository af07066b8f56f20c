//! Grid geometry, the variable/level inventory and the canonical channel order.
//!
//! Every state handled by the harness is a stack of 69 two-dimensional
//! channels on a regular latitude/longitude grid: four surface variables
//! followed by five upper-air variables on thirteen pressure levels. Rows run
//! north to south (row 0 is the northmost latitude) and columns run eastward
//! from `lon_start`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of surface channels.
pub const N_SURFACE: usize = 4;
/// Number of pressure levels carried by every upper-air variable.
pub const N_LEVELS: usize = 13;
/// Number of upper-air variables.
pub const N_UPPER_VARS: usize = 5;
/// Total channel count of a state.
pub const N_CHANNELS: usize = N_SURFACE + N_UPPER_VARS * N_LEVELS;

/// Pressure levels in canonical (descending pressure) order, hPa.
pub const UPPER_LEVELS: [u16; N_LEVELS] =
    [1000, 925, 850, 700, 600, 500, 400, 300, 250, 200, 150, 100, 50];

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid channel: {variable} at level {level}")]
    InvalidChannel { variable: Variable, level: u16 },
    #[error("unknown channel name `{0}`")]
    UnknownChannel(String),
    #[error("index ({i}, {j}) outside {nlat}x{nlon} grid")]
    IndexOutOfRange { i: usize, j: usize, nlat: usize, nlon: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("state has {found} channels, expected {expected}")]
    ChannelCount { expected: usize, found: usize },
    #[error("channel at position {position} is {found}, expected {expected}")]
    ChannelOrder { position: usize, expected: Channel, found: Channel },
    #[error("field {channel} is on a different grid than the state")]
    GridMismatch { channel: Channel },
    #[error("field {channel} has {found} values, expected {expected}")]
    ValueCount { channel: Channel, expected: usize, found: usize },
}

/// Geometry of a regular latitude/longitude grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nlat: usize,
    pub nlon: usize,
    /// Latitude of row 0 (the northmost row), degrees.
    pub lat_start: f64,
    /// North-to-south row spacing, degrees.
    pub dlat: f64,
    /// Longitude of column 0, degrees in `[0, 360)`.
    pub lon_start: f64,
    /// Eastward column spacing, degrees.
    pub dlon: f64,
}

impl GridSpec {
    pub fn new(
        nlat: usize,
        nlon: usize,
        lat_start: f64,
        dlat: f64,
        lon_start: f64,
        dlon: f64,
    ) -> Result<Self, GridError> {
        let grid = GridSpec { nlat, nlon, lat_start, dlat, lon_start, dlon };
        grid.validate()?;
        Ok(grid)
    }

    /// The 0.25° 721x1440 model grid, poles included.
    pub const fn canonical() -> Self {
        GridSpec { nlat: 721, nlon: 1440, lat_start: 90.0, dlat: 0.25, lon_start: 0.0, dlon: 0.25 }
    }

    /// A global grid with `step`-degree spacing that includes both poles.
    pub fn global(step: f64) -> Result<Self, GridError> {
        let nlat = (180.0 / step).round() as usize + 1;
        let nlon = (360.0 / step).round() as usize;
        Self::new(nlat, nlon, 90.0, step, 0.0, step)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |msg: String| Err(GridError::InvalidGrid(msg));
        if self.nlat == 0 || self.nlon == 0 {
            return bad(format!("empty grid {}x{}", self.nlat, self.nlon));
        }
        let all_finite = [self.lat_start, self.dlat, self.lon_start, self.dlon]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite grid parameter".into());
        }
        if self.dlat <= 0.0 || self.dlon <= 0.0 {
            return bad(format!("spacings must be positive (dlat={}, dlon={})", self.dlat, self.dlon));
        }
        if self.lat_start > 90.0 + GRID_EPS || self.lat_end() < -90.0 - GRID_EPS {
            return bad(format!(
                "latitudes {}..{} leave [-90, 90]",
                self.lat_start,
                self.lat_end()
            ));
        }
        if !(0.0..360.0).contains(&self.lon_start) {
            return bad(format!("lon_start {} outside [0, 360)", self.lon_start));
        }
        if self.nlon as f64 * self.dlon > 360.0 + GRID_EPS {
            return bad(format!("{} columns of {}° overlap after wrap", self.nlon, self.dlon));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latitude of the southmost row.
    pub fn lat_end(&self) -> f64 {
        self.lat_start - (self.nlat as f64 - 1.0) * self.dlat
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat_start - i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        (self.lon_start + j as f64 * self.dlon).rem_euclid(360.0)
    }

    /// True when the columns cover the full circle with uniform spacing,
    /// i.e. the last column is one `dlon` west of the first.
    pub fn is_global_lon(&self) -> bool {
        (self.nlon as f64 * self.dlon - 360.0).abs() <= GRID_EPS
    }

    pub fn coords(&self, i: usize, j: usize) -> Result<(f64, f64), GridError> {
        self.check_index(i, j)?;
        Ok((self.lat(i), self.lon(j)))
    }

    /// Row-major offset of `(i, j)`.
    pub fn offset(&self, i: usize, j: usize) -> usize {
        i * self.nlon + j
    }

    pub fn check_index(&self, i: usize, j: usize) -> Result<(), GridError> {
        if i >= self.nlat || j >= self.nlon {
            return Err(GridError::IndexOutOfRange { i, j, nlat: self.nlat, nlon: self.nlon });
        }
        Ok(())
    }

    /// Inverse of [`GridSpec::coords`]: the grid point sitting exactly at
    /// `(lat, lon)`, if any.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let t = (self.lat_start - lat) / self.dlat;
        let s = (lon - self.lon_start).rem_euclid(360.0) / self.dlon;
        let (ti, si) = (t.round(), s.round());
        if (t - ti).abs() > GRID_EPS || (s - si).abs() > GRID_EPS || ti < 0.0 || si < 0.0 {
            return None;
        }
        let (i, mut j) = (ti as usize, si as usize);
        if j == self.nlon && self.is_global_lon() {
            j = 0;
        }
        (i < self.nlat && j < self.nlon).then_some((i, j))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} lat {}..{} step {} / lon {} step {}",
            self.nlat,
            self.nlon,
            self.lat_start,
            self.lat_end(),
            self.dlat,
            self.lon_start,
            self.dlon
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "MSLP")]
    Mslp,
    U10,
    V10,
    T2,
    Z,
    Q,
    T,
    U,
    V,
}

impl Variable {
    pub const SURFACE: [Variable; N_SURFACE] =
        [Variable::Mslp, Variable::U10, Variable::V10, Variable::T2];
    pub const UPPER: [Variable; N_UPPER_VARS] =
        [Variable::Z, Variable::Q, Variable::T, Variable::U, Variable::V];

    pub fn is_surface(self) -> bool {
        matches!(self, Variable::Mslp | Variable::U10 | Variable::V10 | Variable::T2)
    }

    /// On-disk variable code of the archive format.
    pub fn code(self) -> u16 {
        match self {
            Variable::Mslp => 0,
            Variable::U10 => 1,
            Variable::V10 => 2,
            Variable::T2 => 3,
            Variable::Z => 4,
            Variable::Q => 5,
            Variable::T => 6,
            Variable::U => 7,
            Variable::V => 8,
        }
    }

    pub fn from_code(code: u16) -> Option<Variable> {
        Some(match code {
            0 => Variable::Mslp,
            1 => Variable::U10,
            2 => Variable::V10,
            3 => Variable::T2,
            4 => Variable::Z,
            5 => Variable::Q,
            6 => Variable::T,
            7 => Variable::U,
            8 => Variable::V,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Mslp => "MSLP",
            Variable::U10 => "U10",
            Variable::V10 => "V10",
            Variable::T2 => "T2",
            Variable::Z => "Z",
            Variable::Q => "Q",
            Variable::T => "T",
            Variable::U => "U",
            Variable::V => "V",
        }
    }

    /// Storage units.
    pub fn units(self) -> &'static str {
        match self {
            Variable::Mslp => "Pa",
            Variable::U10 | Variable::V10 | Variable::U | Variable::V => "m/s",
            Variable::T2 | Variable::T => "K",
            Variable::Z => "m^2/s^2",
            Variable::Q => "kg/kg",
        }
    }

    /// Factor and units used when a quantity is shown to people. Specific
    /// humidity is kept in kg/kg but reported in g/kg.
    pub fn display_units(self) -> (f64, &'static str) {
        match self {
            Variable::Q => (1000.0, "g/kg"),
            v => (1.0, v.units()),
        }
    }

    pub fn is_wind(self) -> bool {
        matches!(self, Variable::U10 | Variable::V10 | Variable::U | Variable::V)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = Variable::SURFACE.iter().chain(Variable::UPPER.iter());
        all.copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GridError::UnknownChannel(s.to_string()))
    }
}

/// Pressure level in hPa; 0 stands for the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PressureLevel(pub u16);

impl PressureLevel {
    pub const SURFACE: PressureLevel = PressureLevel(0);

    pub fn hpa(self) -> u16 {
        self.0
    }

    pub fn is_surface(self) -> bool {
        self.0 == 0
    }

    /// Position in the canonical 1000 → 50 hPa order.
    pub fn rank(self) -> Option<usize> {
        UPPER_LEVELS.iter().position(|&p| p == self.0)
    }

    pub fn upper_levels() -> impl Iterator<Item = PressureLevel> {
        UPPER_LEVELS.iter().map(|&p| PressureLevel(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelBlock {
    Surface,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelIndex {
    pub block: ChannelBlock,
    pub index: usize,
}

impl ChannelIndex {
    /// Position in the flat 69-channel stack (surface block first).
    pub fn flat(self) -> usize {
        match self.block {
            ChannelBlock::Surface => self.index,
            ChannelBlock::Upper => N_SURFACE + self.index,
        }
    }
}

/// Maps a (variable, level) pair to its block and position in the canonical
/// order. Surface variables are legal only at level 0, upper-air variables
/// only on one of the thirteen pressure levels.
pub fn state_channel_index(
    variable: Variable,
    level: PressureLevel,
) -> Result<ChannelIndex, GridError> {
    let invalid = || GridError::InvalidChannel { variable, level: level.0 };
    if variable.is_surface() {
        if !level.is_surface() {
            return Err(invalid());
        }
        let index = Variable::SURFACE.iter().position(|&v| v == variable).ok_or_else(invalid)?;
        Ok(ChannelIndex { block: ChannelBlock::Surface, index })
    } else {
        let level_rank = level.rank().ok_or_else(invalid)?;
        let var_rank = Variable::UPPER.iter().position(|&v| v == variable).ok_or_else(invalid)?;
        Ok(ChannelIndex { block: ChannelBlock::Upper, index: var_rank * N_LEVELS + level_rank })
    }
}

/// A legal (variable, level) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channel {
    variable: Variable,
    level: PressureLevel,
}

impl Channel {
    pub fn new(variable: Variable, level: PressureLevel) -> Result<Self, GridError> {
        state_channel_index(variable, level)?;
        Ok(Channel { variable, level })
    }

    pub fn surface(variable: Variable) -> Result<Self, GridError> {
        Self::new(variable, PressureLevel::SURFACE)
    }

    pub fn upper(variable: Variable, hpa: u16) -> Result<Self, GridError> {
        Self::new(variable, PressureLevel(hpa))
    }

    pub fn variable(self) -> Variable {
        self.variable
    }

    pub fn level(self) -> PressureLevel {
        self.level
    }

    pub fn index(self) -> ChannelIndex {
        state_channel_index(self.variable, self.level).expect("channel is legal by construction")
    }

    pub fn flat_index(self) -> usize {
        self.index().flat()
    }

    pub fn from_flat(flat: usize) -> Option<Channel> {
        if flat < N_SURFACE {
            Some(Channel { variable: Variable::SURFACE[flat], level: PressureLevel::SURFACE })
        } else if flat < N_CHANNELS {
            let k = flat - N_SURFACE;
            Some(Channel {
                variable: Variable::UPPER[k / N_LEVELS],
                level: PressureLevel(UPPER_LEVELS[k % N_LEVELS]),
            })
        } else {
            None
        }
    }

    /// All 69 channels in canonical order.
    pub fn canonical() -> impl Iterator<Item = Channel> {
        (0..N_CHANNELS).map(|k| Channel::from_flat(k).expect("k < N_CHANNELS"))
    }

    /// Short name: `MSLP`, `T2`, `Z500`, `Q1000`, ...
    pub fn name(self) -> String {
        if self.level.is_surface() {
            self.variable.name().to_string()
        } else {
            format!("{}{}", self.variable.name(), self.level.0)
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Channel {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let unknown = || GridError::UnknownChannel(s.to_string());
        if let Ok(v) = s.parse::<Variable>() {
            if v.is_surface() {
                return Channel::surface(v);
            }
            return Err(unknown());
        }
        let split = s.find(|c: char| c.is_ascii_digit()).ok_or_else(unknown)?;
        let (name, digits) = s.split_at(split);
        let variable: Variable = name.parse().map_err(|_| unknown())?;
        let hpa: u16 = digits.parse().map_err(|_| unknown())?;
        Channel::upper(variable, hpa).map_err(|_| unknown())
    }
}

impl Serialize for Channel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Channel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive latitude/longitude rectangle. Boxes never cross the dateline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, GridError> {
        let b = RegionBox { lat_min, lat_max, lon_min, lon_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let ok_lat = -90.0 <= self.lat_min && self.lat_min <= self.lat_max && self.lat_max <= 90.0;
        let ok_lon = 0.0 <= self.lon_min && self.lon_min <= self.lon_max && self.lon_max <= 360.0;
        if ok_lat && ok_lon {
            Ok(())
        } else {
            Err(GridError::InvalidRegion(format!(
                "lat [{}, {}], lon [{}, {}]",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )))
        }
    }

    pub const fn globe() -> Self {
        RegionBox { lat_min: -90.0, lat_max: 90.0, lon_min: 0.0, lon_max: 360.0 }
    }

    /// 10°S–60°N, 60°E–150°E.
    pub const fn east_asia() -> Self {
        RegionBox { lat_min: -10.0, lat_max: 60.0, lon_min: 60.0, lon_max: 150.0 }
    }

    /// Rectangular distance in degrees from `(lat, lon)` to the box: the
    /// larger of the latitude and longitude gaps, 0 inside. Longitudes are
    /// compared on the circle.
    pub fn distance(&self, lat: f64, lon: f64) -> f64 {
        let lat_gap = (self.lat_min - lat).max(lat - self.lat_max).max(0.0);
        let lon = lon.rem_euclid(360.0);
        let lon_gap = [lon - 360.0, lon, lon + 360.0]
            .iter()
            .map(|&l| (self.lon_min - l).max(l - self.lon_max).max(0.0))
            .fold(f64::INFINITY, f64::min);
        lat_gap.max(lon_gap)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.distance(lat, lon) <= GRID_EPS
    }
}

impl FromStr for RegionBox {
    type Err = GridError;

    /// Parses `lat_min,lat_max,lon_min,lon_max`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| GridError::InvalidRegion(format!("`{s}`: {e}")))?;
        match parts.as_slice() {
            &[a, b, c, d] => RegionBox::new(a, b, c, d),
            _ => Err(GridError::InvalidRegion(format!("`{s}`: expected 4 comma-separated numbers"))),
        }
    }
}
