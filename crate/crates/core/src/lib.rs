//! Evaluation harness for data-driven global weather models: archive I/O,
//! bilinear regridding, regional splicing of initial conditions,
//! autoregressive rollout, latitude-weighted RMSE/ACC and reporting.

pub mod expt;
pub mod fieldio;
pub mod grid;
pub mod plot;
pub mod regrid;
pub mod report;
pub mod rollout;
pub mod splice;
pub mod state;
pub mod synth;
pub mod validate;
pub mod verify;

pub use grid::{Channel, GridSpec, PressureLevel, RegionBox, Variable, N_CHANNELS};
pub use state::{Field, StateSet};
