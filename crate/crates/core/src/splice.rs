//! Regional splicing of initial conditions: a donor analysis replaces a base
//! analysis inside a latitude/longitude box, optionally feathered over a
//! blending annulus around the box.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, RegionBox};
use crate::state::{Field, StateSet};

#[derive(Debug, Error)]
pub enum SpliceError {
    #[error("base and donor are on different grids ({base} vs {donor})")]
    GridMismatch { base: GridSpec, donor: GridSpec },
    #[error("base valid time {base} differs from donor valid time {donor}")]
    TimeMismatch { base: String, donor: String },
    #[error("blend width must be a finite number >= 0, got {0}")]
    BlendWidth(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Boolean mask over a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: GridSpec,
    cells: Vec<bool>,
}

impl RegionMask {
    pub fn from_cells(grid: GridSpec, cells: Vec<bool>) -> Result<Self, GridError> {
        if cells.len() != grid.len() {
            return Err(GridError::InvalidGrid(format!(
                "mask has {} cells, grid has {}",
                cells.len(),
                grid.len()
            )));
        }
        Ok(RegionMask { grid, cells })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[self.grid.offset(i, j)]
    }
}

/// Points of `grid` inside `region`, bounds inclusive.
pub fn region_mask(grid: &GridSpec, region: &RegionBox) -> RegionMask {
    let mut cells = Vec::with_capacity(grid.len());
    for i in 0..grid.nlat {
        let lat = grid.lat(i);
        cells.extend((0..grid.nlon).map(|j| region.contains(lat, grid.lon(j))));
    }
    RegionMask { grid: *grid, cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpliceScope {
    /// Only the 65 pressure-level channels come from the donor.
    #[default]
    UpperOnly,
    AllChannels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpliceSpec {
    pub region: RegionBox,
    pub scope: SpliceScope,
    /// Width of the linear feathering band outside the box, degrees. Zero
    /// gives a hard splice.
    pub blend_width: f64,
    pub allow_time_mismatch: bool,
}

impl Default for SpliceSpec {
    fn default() -> Self {
        SpliceSpec {
            region: RegionBox::east_asia(),
            scope: SpliceScope::UpperOnly,
            blend_width: 0.0,
            allow_time_mismatch: false,
        }
    }
}

/// Label of a spliced state: donor, `pad`, base.
pub fn splice_label(base: &str, donor: &str) -> String {
    format!("{donor}pad{base}")
}

/// Donor weight at every grid point: 1 inside the box, falling linearly to
/// 0 at `blend_width` degrees outside it.
pub fn donor_weights(grid: &GridSpec, region: &RegionBox, blend_width: f64) -> Vec<f64> {
    let mask = region_mask(grid, region);
    let mut alpha = Vec::with_capacity(grid.len());
    for i in 0..grid.nlat {
        let lat = grid.lat(i);
        for j in 0..grid.nlon {
            let a = if mask.get(i, j) {
                1.0
            } else if blend_width == 0.0 {
                0.0
            } else {
                let d = region.distance(lat, grid.lon(j));
                if d >= blend_width {
                    0.0
                } else {
                    1.0 - d / blend_width
                }
            };
            alpha.push(a);
        }
    }
    alpha
}

fn blend(base: &Field, donor: &Field, alpha: &[f64]) -> Field {
    let mut out = base.clone();
    for ((o, &d), &a) in out.values_mut().iter_mut().zip(donor.values()).zip(alpha) {
        if a == 1.0 {
            *o = d;
        } else if a > 0.0 {
            *o = (a * d as f64 + (1.0 - a) * *o as f64) as f32;
        }
    }
    out
}

pub fn splice_states(
    base: &StateSet,
    donor: &StateSet,
    spec: &SpliceSpec,
) -> Result<StateSet, SpliceError> {
    spec.region.validate()?;
    if !(spec.blend_width.is_finite() && spec.blend_width >= 0.0) {
        return Err(SpliceError::BlendWidth(spec.blend_width));
    }
    if base.grid() != donor.grid() {
        return Err(SpliceError::GridMismatch { base: *base.grid(), donor: *donor.grid() });
    }
    if base.valid_time() != donor.valid_time() && !spec.allow_time_mismatch {
        return Err(SpliceError::TimeMismatch {
            base: base.valid_time().to_rfc3339(),
            donor: donor.valid_time().to_rfc3339(),
        });
    }
    let alpha = donor_weights(base.grid(), &spec.region, spec.blend_width);
    let fields: Vec<Field> = base
        .fields()
        .par_iter()
        .zip(donor.fields().par_iter())
        .map(|(b, d)| {
            let in_scope = spec.scope == SpliceScope::AllChannels || !b.variable().is_surface();
            if in_scope {
                blend(b, d, &alpha)
            } else {
                b.clone()
            }
        })
        .collect();
    let label = splice_label(base.source_label(), donor.source_label());
    Ok(StateSet::new(base.valid_time(), label, *base.grid(), fields)?)
}
