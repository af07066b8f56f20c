//! Bilinear regridding between regular latitude/longitude grids.
//!
//! Interpolation is linear in latitude and in longitude separately, so the
//! plan factors into one bracket per destination row and one per
//! destination column. Longitudes wrap: the cell between the last and the
//! first source meridian is a regular cell. Destination latitudes poleward
//! of the outermost source rows are clamped to those rows.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, GridSpec};
use crate::state::{Field, StateSet};

/// Tolerance for snapping fractional positions onto source nodes.
const SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RegridError {
    #[error("degenerate source grid {nlat}x{nlon}: need at least 2x2")]
    DegenerateSource { nlat: usize, nlon: usize },
    #[error("field grid does not match the plan's source grid")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Two source nodes along one axis and the fractional weight of the second.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bracket {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Precomputed interpolation from one grid to another.
#[derive(Debug, Clone, PartialEq)]
pub struct RegridPlan {
    source: GridSpec,
    destination: GridSpec,
    rows: Vec<Bracket>,
    cols: Vec<Bracket>,
}

fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < SNAP {
        r
    } else {
        t
    }
}

fn lat_bracket(src: &GridSpec, lat: f64) -> Bracket {
    let last = src.nlat - 1;
    let t = snap((src.lat_start - lat) / src.dlat);
    if t <= 0.0 {
        return Bracket { lo: 0, hi: 0, frac: 0.0 };
    }
    if t >= last as f64 {
        return Bracket { lo: last, hi: last, frac: 0.0 };
    }
    let lo = t.floor() as usize;
    Bracket { lo, hi: lo + 1, frac: t - lo as f64 }
}

fn lon_bracket(src: &GridSpec, lon: f64) -> Bracket {
    let last = src.nlon - 1;
    let offset = (lon - src.lon_start).rem_euclid(360.0);
    let mut s = snap(offset / src.dlon);
    if s >= src.nlon as f64 && src.is_global_lon() {
        s -= src.nlon as f64;
    }
    if s < last as f64 {
        let lo = s.floor() as usize;
        return Bracket { lo, hi: lo + 1, frac: s - lo as f64 };
    }
    // wrap cell from the last meridian eastward to the first one
    let span = last as f64 * src.dlon;
    let gap = 360.0 - span;
    let frac = snap((offset - span).max(0.0) / gap).min(1.0);
    if frac == 1.0 {
        Bracket { lo: 0, hi: 0, frac: 0.0 }
    } else {
        Bracket { lo: last, hi: 0, frac }
    }
}

pub fn build_plan(src: &GridSpec, dst: &GridSpec) -> Result<RegridPlan, RegridError> {
    src.validate()?;
    dst.validate()?;
    if src.nlat < 2 || src.nlon < 2 {
        return Err(RegridError::DegenerateSource { nlat: src.nlat, nlon: src.nlon });
    }
    let rows = (0..dst.nlat).map(|i| lat_bracket(src, dst.lat(i))).collect();
    let cols = (0..dst.nlon).map(|j| lon_bracket(src, dst.lon(j))).collect();
    Ok(RegridPlan { source: *src, destination: *dst, rows, cols })
}

impl RegridPlan {
    pub fn source(&self) -> &GridSpec {
        &self.source
    }

    pub fn destination(&self) -> &GridSpec {
        &self.destination
    }

    /// Source offsets and weights for destination point `(i, j)`, ordered
    /// (lo-row lo-col, lo-row hi-col, hi-row lo-col, hi-row hi-col).
    pub fn point(&self, i: usize, j: usize) -> ([usize; 4], [f64; 4]) {
        let (r, c) = (self.rows[i], self.cols[j]);
        let nlon = self.source.nlon;
        let idx = [r.lo * nlon + c.lo, r.lo * nlon + c.hi, r.hi * nlon + c.lo, r.hi * nlon + c.hi];
        let (fy, fx) = (r.frac, c.frac);
        let w = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx];
        (idx, w)
    }

    /// Interpolates one field. Weights with value zero are skipped and the
    /// sum starts from -0.0, so a point landing on a source node copies it
    /// bit for bit.
    pub fn apply(&self, field: &Field) -> Result<Field, RegridError> {
        if *field.grid() != self.source {
            return Err(RegridError::GridMismatch);
        }
        let src = field.values();
        let dst = self.destination;
        let mut out = vec![0f32; dst.len()];
        for (i, row) in out.chunks_mut(dst.nlon).enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                let (idx, w) = self.point(i, j);
                let mut acc = -0.0f64;
                for k in 0..4 {
                    if w[k] != 0.0 {
                        acc += w[k] * src[idx[k]] as f64;
                    }
                }
                *slot = acc as f32;
            }
        }
        Ok(Field::new(field.channel(), dst, out)?)
    }
}

pub fn apply_plan(plan: &RegridPlan, field: &Field) -> Result<Field, RegridError> {
    plan.apply(field)
}

/// Regrids every channel of `state` onto `dst` with one shared plan.
pub fn regrid_state(state: &StateSet, dst: &GridSpec) -> Result<StateSet, RegridError> {
    if state.grid() == dst {
        return Ok(state.clone());
    }
    let plan = build_plan(state.grid(), dst)?;
    let fields = state
        .fields()
        .par_iter()
        .map(|f| plan.apply(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StateSet::new(state.valid_time(), state.source_label(), *dst, fields)?)
}
