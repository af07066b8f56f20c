//! In-memory fields and 69-channel atmospheric states.

use chrono::{DateTime, Utc};

use crate::grid::{Channel, GridError, GridSpec, PressureLevel, Variable, N_CHANNELS, N_SURFACE};

/// One channel on a grid, row-major with row 0 the northmost latitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    channel: Channel,
    grid: GridSpec,
    values: Vec<f32>,
}

impl Field {
    pub fn new(channel: Channel, grid: GridSpec, values: Vec<f32>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::ValueCount { channel, expected: grid.len(), found: values.len() });
        }
        Ok(Field { channel, grid, values })
    }

    pub fn filled(channel: Channel, grid: GridSpec, value: f32) -> Self {
        Field { channel, grid, values: vec![value; grid.len()] }
    }

    /// Field whose value at every point is `f(lat, lon)`.
    pub fn from_fn(channel: Channel, grid: GridSpec, mut f: impl FnMut(f64, f64) -> f32) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nlat {
            let lat = grid.lat(i);
            for j in 0..grid.nlon {
                values.push(f(lat, grid.lon(j)));
            }
        }
        Field { channel, grid, values }
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn variable(&self) -> Variable {
        self.channel.variable()
    }

    pub fn level(&self) -> PressureLevel {
        self.channel.level()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[self.grid.offset(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.grid.nlon..(i + 1) * self.grid.nlon]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A timestamped 69-channel state: surface `[MSLP, U10, V10, T2]` followed
/// by `[Z, Q, T, U, V]` × `[1000 … 50 hPa]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    valid_time: DateTime<Utc>,
    source_label: String,
    grid: GridSpec,
    fields: Vec<Field>,
}

impl StateSet {
    /// Builds a state, rejecting bad grids, wrong channel counts or order and
    /// fields on a different grid.
    pub fn new(
        valid_time: DateTime<Utc>,
        source_label: impl Into<String>,
        grid: GridSpec,
        fields: Vec<Field>,
    ) -> Result<Self, GridError> {
        grid.validate()?;
        if fields.len() != N_CHANNELS {
            return Err(GridError::ChannelCount { expected: N_CHANNELS, found: fields.len() });
        }
        for (position, (field, expected)) in fields.iter().zip(Channel::canonical()).enumerate() {
            if field.channel != expected {
                return Err(GridError::ChannelOrder { position, expected, found: field.channel });
            }
            if field.grid != grid {
                return Err(GridError::GridMismatch { channel: field.channel });
            }
        }
        Ok(StateSet { valid_time, source_label: source_label.into(), grid, fields })
    }

    /// Assembles a state without structural checks. Use
    /// [`crate::validate::validate_state`] before handing it to anything else.
    pub fn from_parts_unchecked(
        valid_time: DateTime<Utc>,
        source_label: impl Into<String>,
        grid: GridSpec,
        fields: Vec<Field>,
    ) -> Self {
        StateSet { valid_time, source_label: source_label.into(), grid, fields }
    }

    /// Builds a state by evaluating `f` for every canonical channel.
    pub fn from_channels(
        valid_time: DateTime<Utc>,
        source_label: impl Into<String>,
        grid: GridSpec,
        f: impl FnMut(Channel) -> Field,
    ) -> Result<Self, GridError> {
        let fields = Channel::canonical().map(f).collect();
        Self::new(valid_time, source_label, grid, fields)
    }

    pub fn valid_time(&self) -> DateTime<Utc> {
        self.valid_time
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [Field] {
        &mut self.fields
    }

    pub fn into_fields(self) -> Vec<Field> {
        self.fields
    }

    pub fn surface(&self) -> &[Field] {
        &self.fields[..N_SURFACE.min(self.fields.len())]
    }

    pub fn upper(&self) -> &[Field] {
        &self.fields[N_SURFACE.min(self.fields.len())..]
    }

    pub fn field(&self, channel: Channel) -> &Field {
        &self.fields[channel.flat_index()]
    }

    pub fn field_by(&self, variable: Variable, level: PressureLevel) -> Result<&Field, GridError> {
        Ok(self.field(Channel::new(variable, level)?))
    }

    pub fn with_valid_time(mut self, valid_time: DateTime<Utc>) -> Self {
        self.valid_time = valid_time;
        self
    }

    pub fn with_source_label(mut self, label: impl Into<String>) -> Self {
        self.source_label = label.into();
        self
    }
}
