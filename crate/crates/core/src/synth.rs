//! Synthetic states and climatologies for tests, demos and smoke runs.
//!
//! Fields are a smooth zonal-mean profile plus a seeded planetary wave and a
//! little gridpoint noise, kept inside the default validation ranges.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Channel, GridSpec, Variable};
use crate::state::{Field, StateSet};
use crate::verify::Climatology;

const GRAVITY: f64 = 9.806_65;

fn zonal_mean(channel: Channel, lat: f64) -> f64 {
    let s2 = lat.to_radians().sin().powi(2);
    let c = lat.to_radians().cos();
    let p = channel.level().hpa() as f64;
    match channel.variable() {
        Variable::Mslp => 101_325.0 - 800.0 * (3.0 * lat.to_radians()).cos(),
        Variable::U10 => 6.0 * (3.0 * lat.to_radians()).cos() * c,
        Variable::V10 => 0.0,
        Variable::T2 => 300.0 - 50.0 * s2,
        Variable::Z => GRAVITY * 7_400.0 * (1_013.25 / p).ln() - 2_000.0 * s2 * (1_000.0 / p).sqrt(),
        Variable::Q => 0.018 * (p / 1000.0).powi(3) * c * c,
        Variable::T => 205.0 + 95.0 * (p / 1000.0).sqrt() - 30.0 * s2 * (p / 1000.0),
        Variable::U => 25.0 * (1000.0 / p).powf(0.3).min(3.0) * (2.0 * lat.to_radians()).sin().powi(2),
        Variable::V => 0.0,
    }
}

fn wave_amplitude(variable: Variable) -> f64 {
    match variable {
        Variable::Mslp => 900.0,
        Variable::U10 | Variable::V10 => 4.0,
        Variable::T2 => 6.0,
        Variable::Z => 600.0,
        Variable::Q => 0.002,
        Variable::T => 4.0,
        Variable::U | Variable::V => 8.0,
    }
}

/// Typical noise amplitude per variable.
pub fn noise_scale(variable: Variable) -> f64 {
    match variable {
        Variable::Mslp => 120.0,
        Variable::U10 | Variable::V10 | Variable::U | Variable::V => 1.2,
        Variable::T2 | Variable::T => 0.8,
        Variable::Z => 60.0,
        Variable::Q => 2.0e-4,
    }
}

fn clamp_physical(variable: Variable, v: f64) -> f64 {
    match variable {
        Variable::Q => v.clamp(0.0, 0.049),
        _ => v,
    }
}

/// A plausible state whose pattern depends on `seed`.
pub fn synthetic_state(
    grid: GridSpec,
    valid_time: DateTime<Utc>,
    label: &str,
    seed: u64,
) -> StateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StateSet::from_channels(valid_time, label, grid, |channel| {
        let var = channel.variable();
        let amp = wave_amplitude(var);
        let wavenumber = rng.gen_range(1..=4) as f64;
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let noise = 0.1 * noise_scale(var);
        Field::from_fn(channel, grid, |lat, lon| {
            let envelope = lat.to_radians().cos();
            let wave = amp * envelope * (wavenumber * lon.to_radians() + phase).sin();
            let jitter = noise * rng.gen_range(-1.0..1.0);
            clamp_physical(var, zonal_mean(channel, lat) + wave + jitter) as f32
        })
    })
    .expect("canonical channel order")
}

/// The zonal-mean profile alone, as a climatology on `grid`.
pub fn synthetic_climatology(grid: GridSpec) -> Climatology {
    let fields = Channel::canonical()
        .map(|c| Field::from_fn(c, grid, |lat, _| zonal_mean(c, lat) as f32))
        .collect();
    Climatology::new(grid, fields).expect("canonical channel order")
}

/// Adds seeded uniform noise of `scale` × [`noise_scale`] to every value.
pub fn add_noise(state: &StateSet, scale: f64, seed: u64) -> StateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = state.clone();
    for field in out.fields_mut() {
        let var = field.variable();
        let amp = scale * noise_scale(var);
        for v in field.values_mut() {
            let perturbed = *v as f64 + amp * rng.gen_range(-1.0..1.0);
            *v = clamp_physical(var, perturbed) as f32;
        }
    }
    out
}
