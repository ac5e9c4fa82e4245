//! Voxel-grid data model shared by every pipeline stage.
//!
//! Axis order is fixed as (x: left-right, y: anterior-posterior,
//! z: inferior-superior). Data is stored row-major with x fastest, so the
//! linear index of voxel `(x, y, z)` is `x + nx * (y + ny * z)`. Imaging
//! stations stack along z.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("grid dimension {axis} is zero")]
    ZeroDim { axis: usize },
    #[error("grid spacing on axis {axis} is {value}, must be finite and > 0")]
    BadSpacing { axis: usize, value: f64 },
    #[error("grid origin on axis {axis} is not finite")]
    BadOrigin { axis: usize },
    #[error("data length {actual} does not match grid size {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },
    #[error("volumes are on different grids")]
    GridMismatch,
    #[error("label {0} is not a known region code")]
    UnknownLabel(u32),
    #[error("station slabs invalid: {0}")]
    BadSlabs(String),
    #[error("study needs at least two b-values, got {0}")]
    InsufficientBValues(usize),
    #[error("b-values must be strictly ascending")]
    UnsortedBValues,
    #[error("skeleton probability {value} at voxel {index} outside [0, 1]")]
    ProbabilityRange { index: usize, value: f64 },
}

/// Shape and physical placement of a voxel grid (spacing and origin in mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, ModelError> {
        let meta = GridMeta { dims, spacing, origin };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for axis in 0..3 {
            if self.dims[axis] == 0 {
                return Err(ModelError::ZeroDim { axis });
            }
            let s = self.spacing[axis];
            if !(s.is_finite() && s > 0.0) {
                return Err(ModelError::BadSpacing { axis, value: s });
            }
            if !self.origin[axis].is_finite() {
                return Err(ModelError::BadOrigin { axis });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Number of voxels in one axial (z) slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Physical position (mm) of a voxel centre.
    pub fn position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    pub fn same_grid(&self, other: &GridMeta) -> bool {
        self == other
    }
}

/// Volume of one voxel in millilitres.
pub fn voxel_volume_ml(meta: &GridMeta) -> f64 {
    meta.voxel_volume_mm3() / 1000.0
}

/// Dense real-valued volume (signal images, S0, gADC, probability maps, masks).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    meta: GridMeta,
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(meta: GridMeta, data: Vec<f64>) -> Result<Self, ModelError> {
        meta.validate()?;
        if data.len() != meta.len() {
            return Err(ModelError::LengthMismatch { expected: meta.len(), actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(ScalarVolume { meta, data })
    }

    pub fn filled(meta: GridMeta, value: f64) -> Self {
        assert!(value.is_finite());
        ScalarVolume { data: vec![value; meta.len()], meta }
    }

    pub fn zeros(meta: GridMeta) -> Self {
        Self::filled(meta, 0.0)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(meta: GridMeta, f: impl Fn(usize, usize, usize) -> f64 + Sync) -> Result<Self, ModelError> {
        let data: Vec<f64> = (0..meta.len())
            .into_par_iter()
            .map(|i| {
                let [x, y, z] = meta.coords(i);
                f(x, y, z)
            })
            .collect();
        Self::new(meta, data)
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.meta.index(x, y, z)]
    }

    /// Applies `f` to every voxel; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Result<Self, ModelError> {
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Self::new(self.meta, data)
    }

    /// Voxels with value > 0.5 (binary mask convention).
    pub fn mask_indices(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(i, _)| i).collect()
    }

    pub fn is_set(&self, index: usize) -> bool {
        self.data[index] > 0.5
    }
}

/// Skeletal region codes. `WholeSkeleton` is an aggregate and never a voxel label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionCode {
    Limbs,
    Pelvis,
    Thorax,
    LumbarSpine,
    ThoracicSpine,
    CervicalSpine,
    WholeSkeleton,
}

impl RegionCode {
    /// The non-aggregate regions, in code order.
    pub const REGIONS: [RegionCode; 6] = [
        RegionCode::Limbs,
        RegionCode::Pelvis,
        RegionCode::Thorax,
        RegionCode::LumbarSpine,
        RegionCode::ThoracicSpine,
        RegionCode::CervicalSpine,
    ];

    /// Label value stored in region-label volumes (0 is background).
    pub fn code(self) -> u32 {
        match self {
            RegionCode::Limbs => 1,
            RegionCode::Pelvis => 2,
            RegionCode::Thorax => 3,
            RegionCode::LumbarSpine => 4,
            RegionCode::ThoracicSpine => 5,
            RegionCode::CervicalSpine => 6,
            RegionCode::WholeSkeleton => 0,
        }
    }

    pub fn from_code(code: u32) -> Result<Option<RegionCode>, ModelError> {
        match code {
            0 => Ok(None),
            1 => Ok(Some(RegionCode::Limbs)),
            2 => Ok(Some(RegionCode::Pelvis)),
            3 => Ok(Some(RegionCode::Thorax)),
            4 => Ok(Some(RegionCode::LumbarSpine)),
            5 => Ok(Some(RegionCode::ThoracicSpine)),
            6 => Ok(Some(RegionCode::CervicalSpine)),
            other => Err(ModelError::UnknownLabel(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionCode::Limbs => "limbs",
            RegionCode::Pelvis => "pelvis",
            RegionCode::Thorax => "thorax",
            RegionCode::LumbarSpine => "lumbar_spine",
            RegionCode::ThoracicSpine => "thoracic_spine",
            RegionCode::CervicalSpine => "cervical_spine",
            RegionCode::WholeSkeleton => "whole_skeleton",
        }
    }
}

impl fmt::Display for RegionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Integer label volume whose labels are region codes (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    meta: GridMeta,
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(meta: GridMeta, data: Vec<u32>) -> Result<Self, ModelError> {
        meta.validate()?;
        if data.len() != meta.len() {
            return Err(ModelError::LengthMismatch { expected: meta.len(), actual: data.len() });
        }
        for &label in &data {
            RegionCode::from_code(label)?;
        }
        Ok(LabelVolume { meta, data })
    }

    /// Converts a real-valued volume holding integral region codes.
    pub fn from_scalar(vol: &ScalarVolume) -> Result<Self, ModelError> {
        let data = vol
            .data()
            .iter()
            .map(|&v| if v <= 0.0 { 0 } else { v.round() as u32 })
            .collect();
        Self::new(*vol.meta(), data)
    }

    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume { meta: self.meta, data: self.data.iter().map(|&v| v as f64).collect() }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn region_at(&self, index: usize) -> Option<RegionCode> {
        RegionCode::from_code(self.data[index]).ok().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimepointTag {
    Pre,
    Post,
    Baseline1,
    Baseline2,
}

impl fmt::Display for TimepointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimepointTag::Pre => "pre",
            TimepointTag::Post => "post",
            TimepointTag::Baseline1 => "baseline1",
            TimepointTag::Baseline2 => "baseline2",
        })
    }
}

/// Inclusive z index range of one imaging station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationSlab {
    pub z_start: usize,
    pub z_end: usize,
}

impl StationSlab {
    pub fn len(&self) -> usize {
        self.z_end + 1 - self.z_start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, z: usize) -> bool {
        z >= self.z_start && z <= self.z_end
    }
}

/// Checks that slabs are ordered, abutting, and exactly cover `0..nz`.
pub fn validate_slabs(slabs: &[StationSlab], nz: usize) -> Result<(), ModelError> {
    if slabs.is_empty() {
        return Err(ModelError::BadSlabs("no stations".into()));
    }
    let mut next = 0usize;
    for (i, slab) in slabs.iter().enumerate() {
        if slab.z_end < slab.z_start {
            return Err(ModelError::BadSlabs(format!("station {i} has z_end < z_start")));
        }
        if slab.z_start < next {
            return Err(ModelError::BadSlabs(format!("station {i} overlaps the previous station")));
        }
        if slab.z_start > next {
            return Err(ModelError::BadSlabs(format!("gap before station {i} at z={next}")));
        }
        next = slab.z_end + 1;
    }
    if next != nz {
        return Err(ModelError::BadSlabs(format!("stations cover z 0..{next} but volume has {nz} slices")));
    }
    Ok(())
}

/// Even split of `nz` slices into `n` abutting stations (remainder to the last).
pub fn even_slabs(nz: usize, n: usize) -> Vec<StationSlab> {
    let n = n.max(1).min(nz);
    let base = nz / n;
    (0..n)
        .map(|i| {
            let z_start = i * base;
            let z_end = if i + 1 == n { nz - 1 } else { (i + 1) * base - 1 };
            StationSlab { z_start, z_end }
        })
        .collect()
}

/// One timepoint's assembled whole-body acquisition and auxiliary maps.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyBundle {
    pub b_values: Vec<f64>,
    pub b_volumes: Vec<ScalarVolume>,
    pub station_slabs: Vec<StationSlab>,
    pub skeleton_prob: ScalarVolume,
    /// Spinal cord + CSF mask. Absent masks surface as a normalization error.
    pub canal_mask: Option<ScalarVolume>,
    pub organ_mask: ScalarVolume,
    pub region_labels: LabelVolume,
    pub timepoint: TimepointTag,
}

impl StudyBundle {
    pub fn meta(&self) -> &GridMeta {
        self.b_volumes[0].meta()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.b_values.len() < 2 || self.b_volumes.len() != self.b_values.len() {
            return Err(ModelError::InsufficientBValues(self.b_values.len().min(self.b_volumes.len())));
        }
        if self.b_values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ModelError::UnsortedBValues);
        }
        let meta = *self.meta();
        let same = |m: &GridMeta| m.same_grid(&meta);
        if !self.b_volumes.iter().all(|v| same(v.meta()))
            || !same(self.skeleton_prob.meta())
            || !same(self.organ_mask.meta())
            || !same(self.region_labels.meta())
            || self.canal_mask.as_ref().is_some_and(|c| !same(c.meta()))
        {
            return Err(ModelError::GridMismatch);
        }
        validate_slabs(&self.station_slabs, meta.dims[2])?;
        if let Some((index, &value)) =
            self.skeleton_prob.data().iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v))
        {
            return Err(ModelError::ProbabilityRange { index, value });
        }
        Ok(())
    }

    /// Index of the station containing slice `z`.
    pub fn station_of(&self, z: usize) -> Option<usize> {
        self.station_slabs.iter().position(|s| s.contains(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    Trilinear,
    Nearest,
}

/// Resamples `src` onto `target` in the shared physical frame.
///
/// A source voxel covers half a voxel either side of its centre; target
/// samples that fall outside that footprint become 0. Trilinear samples
/// within the footprint but beyond the outermost centres use the edge value.
pub fn resample_to_grid(src: &ScalarVolume, target: &GridMeta, mode: ResampleMode) -> Result<ScalarVolume, ModelError> {
    target.validate()?;
    src.meta.validate()?;
    if let Some(index) = src.data.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { index });
    }
    if src.meta == *target {
        return Ok(src.clone());
    }
    let sm = src.meta;
    // continuous source index for each target coordinate, per axis
    let axis_map = |axis: usize| -> Vec<Option<f64>> {
        (0..target.dims[axis])
            .map(|i| {
                let p = target.origin[axis] + i as f64 * target.spacing[axis];
                let c = (p - sm.origin[axis]) / sm.spacing[axis];
                let n = sm.dims[axis] as f64;
                const EPS: f64 = 1e-9;
                if c < -0.5 - EPS || c > n - 0.5 + EPS {
                    None
                } else {
                    Some(c.clamp(0.0, n - 1.0))
                }
            })
            .collect()
    };
    let (mx, my, mz) = (axis_map(0), axis_map(1), axis_map(2));
    let data: Vec<f64> = (0..target.len())
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = target.coords(i);
            let (Some(cx), Some(cy), Some(cz)) = (mx[x], my[y], mz[z]) else {
                return 0.0;
            };
            match mode {
                ResampleMode::Nearest => {
                    let ix = cx.round() as usize;
                    let iy = cy.round() as usize;
                    let iz = cz.round() as usize;
                    src.data[sm.index(ix, iy, iz)]
                }
                ResampleMode::Trilinear => trilinear(src, cx, cy, cz),
            }
        })
        .collect();
    ScalarVolume::new(*target, data)
}

fn trilinear(src: &ScalarVolume, cx: f64, cy: f64, cz: f64) -> f64 {
    let m = &src.meta;
    let split = |c: f64, n: usize| -> (usize, usize, f64) {
        let i0 = (c.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let (x0, x1, fx) = split(cx, m.dims[0]);
    let (y0, y1, fy) = split(cy, m.dims[1]);
    let (z0, z1, fz) = split(cz, m.dims[2]);
    let v = |x, y, z| src.data[m.index(x, y, z)];
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), fx);
    let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), fx);
    let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), fx);
    let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    lerp(c0, c1, fz)
}

/// Grid covering the same field of view as `meta` with new in-plane spacing.
/// Slice spacing and count are preserved.
pub fn regrid_in_plane(meta: &GridMeta, spacing_xy: f64) -> GridMeta {
    let mut out = *meta;
    for axis in 0..2 {
        let fov = meta.dims[axis] as f64 * meta.spacing[axis];
        let n = ((fov / spacing_xy).round() as usize).max(1);
        out.dims[axis] = n;
        out.spacing[axis] = spacing_xy;
        // align the footprints' lower edges
        out.origin[axis] = meta.origin[axis] - meta.spacing[axis] / 2.0 + spacing_xy / 2.0;
    }
    out
}
