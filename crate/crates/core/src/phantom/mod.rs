//! Synthetic multi-station WB-DWI studies with known ground truth.
//!
//! The body is an elliptic cylinder along z (feet at z = 0). Bone is laid
//! out by axial band: femurs, pelvis, then a vertebral column with ribs in
//! the thoracic band. The spinal canal runs behind the vertebrae and one
//! organ ellipsoid sits anterior to the spine. Lesions are spheroids
//! clipped to bone. Signal follows S(b) = g_station * g_scan *
//! (S0 exp(-b ADC) + noise) with Gaussian noise.

pub mod cohort;

pub use cohort::{generate_cohort, write_cohort, CohortPair, CohortPlan, CohortSpec, PhantomCase};

use crate::io::{write_nifti, write_study, IngestError, NiftiError};
use crate::model::{
    even_slabs, validate_slabs, GridMeta, LabelVolume, ModelError, RegionCode, ScalarVolume, StationSlab, StudyBundle, TimepointTag,
};
use crate::numfmt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("lesion {index} centre {center:?} mm lies outside the grid")]
    LesionOutside { index: usize, center: [f64; 3] },
    #[error("lesion {index} has a non-positive radius")]
    LesionRadius { index: usize },
    #[error("{expected} station gains expected, got {found}")]
    GainCount { expected: usize, found: usize },
    #[error("invalid phantom spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Signal parameters of one tissue class. Values are drawn uniformly from
/// `[lo, hi]` once per phantom (per lesion for the lesion class).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueParams {
    pub s0: [f64; 2],
    /// mm²/s
    pub adc: [f64; 2],
}

impl TissueParams {
    pub const fn fixed(s0: f64, adc: f64) -> Self {
        TissueParams { s0: [s0, s0], adc: [adc, adc] }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        (uniform(rng, self.s0), uniform(rng, self.adc))
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TissueRecipe {
    pub marrow: TissueParams,
    pub lesion: TissueParams,
    pub organ: TissueParams,
    pub canal: TissueParams,
    pub soft_tissue: TissueParams,
    pub air: TissueParams,
}

impl Default for TissueRecipe {
    fn default() -> Self {
        TissueRecipe {
            marrow: TissueParams::fixed(120.0, 0.3e-3),
            lesion: TissueParams::fixed(600.0, 0.9e-3),
            organ: TissueParams::fixed(400.0, 1.5e-3),
            canal: TissueParams::fixed(800.0, 2.5e-3),
            soft_tissue: TissueParams::fixed(150.0, 1.4e-3),
            air: TissueParams::fixed(0.0, 0.0),
        }
    }
}

/// One lesion: a spheroid (mm) clipped to bone. `s0`/`adc` override the
/// recipe draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    #[serde(default)]
    pub s0: Option<f64>,
    #[serde(default)]
    pub adc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub stations: usize,
    pub b_values: Vec<f64>,
    pub tissues: TissueRecipe,
    pub lesions: Vec<LesionSpec>,
    /// One per station; empty means all 1.
    pub station_gains: Vec<f64>,
    pub scan_gain: f64,
    /// Noise SD as a fraction of the marrow S0 (lower bound of its range).
    pub noise_sigma: f64,
    pub seed: u64,
    /// Emit no spinal canal mask (exercises the missing-mask path).
    pub omit_canal: bool,
    pub timepoint: TimepointTag,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 48, 80],
            spacing: [4.0, 4.0, 5.0],
            stations: 4,
            b_values: vec![50.0, 600.0, 900.0],
            tissues: TissueRecipe::default(),
            lesions: Vec::new(),
            station_gains: Vec::new(),
            scan_gain: 1.0,
            noise_sigma: 0.0,
            seed: 0,
            omit_canal: false,
            timepoint: TimepointTag::Pre,
        }
    }
}

impl PhantomSpec {
    pub fn meta(&self) -> Result<GridMeta, ModelError> {
        GridMeta::new(self.dims, self.spacing, [0.0; 3])
    }

    pub fn slabs(&self) -> Vec<StationSlab> {
        even_slabs(self.dims[2], self.stations)
    }

    pub fn gains(&self) -> Vec<f64> {
        if self.station_gains.is_empty() {
            vec![1.0; self.stations]
        } else {
            self.station_gains.clone()
        }
    }

    pub fn validate(&self) -> Result<GridMeta, PhantomError> {
        let meta = self.meta()?;
        if self.stations == 0 || self.stations > self.dims[2] {
            return Err(PhantomError::Invalid(format!("{} stations for {} slices", self.stations, self.dims[2])));
        }
        validate_slabs(&self.slabs(), self.dims[2])?;
        if !self.station_gains.is_empty() && self.station_gains.len() != self.stations {
            return Err(PhantomError::GainCount { expected: self.stations, found: self.station_gains.len() });
        }
        if self.gains().iter().chain([&self.scan_gain]).any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(PhantomError::Invalid("gains must be positive".into()));
        }
        if self.b_values.len() < 2 || self.b_values.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(PhantomError::Invalid("need at least two non-negative b-values".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(PhantomError::Invalid("noise_sigma must be non-negative".into()));
        }
        let extent = [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a]);
        for (index, l) in self.lesions.iter().enumerate() {
            if l.radii_mm.iter().any(|r| !(*r > 0.0)) {
                return Err(PhantomError::LesionRadius { index });
            }
            if (0..3).any(|a| !(l.center_mm[a] >= 0.0 && l.center_mm[a] < extent[a])) {
                return Err(PhantomError::LesionOutside { index, center: l.center_mm });
            }
        }
        Ok(meta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tissue {
    Air,
    SoftTissue,
    Organ,
    Canal,
    Marrow,
    /// Index into the spec's lesion list.
    Lesion(usize),
}

/// Static anatomy for a grid: per-voxel tissue (before lesions) and region.
pub struct Anatomy {
    pub meta: GridMeta,
    pub tissue: Vec<Tissue>,
    pub regions: Vec<u32>,
}

/// Axial bands as fractions of body length.
pub mod bands {
    pub const PELVIS: f64 = 0.30;
    pub const SPINE: f64 = 0.45;
    pub const THORACIC: f64 = 0.60;
    pub const CERVICAL: f64 = 0.85;
    pub const CANAL: f64 = 0.40;
    pub const ORGAN: [f64; 2] = [0.47, 0.59];
}

pub fn anatomy(meta: &GridMeta) -> Anatomy {
    let [nx, ny, nz] = meta.dims;
    let (w, d, l) = (nx as f64 * meta.spacing[0], ny as f64 * meta.spacing[1], nz as f64 * meta.spacing[2]);
    let (cx, cy) = (w / 2.0, d / 2.0);
    let ell = |x: f64, y: f64, ax: f64, ay: f64| (x / ax).powi(2) + (y / ay).powi(2) <= 1.0;
    let spine_y = cy + 0.15 * d;
    let vert_r = 0.08 * w;
    let canal_y = spine_y + vert_r + 0.04 * w;
    let canal_r = 0.035 * w;
    let organ_c = [cx - 0.15 * w, cy - 0.10 * d, (bands::ORGAN[0] + bands::ORGAN[1]) / 2.0 * l];
    let organ_r = [0.14 * w, 0.12 * d, (bands::ORGAN[1] - bands::ORGAN[0]) / 2.0 * l];
    let mut tissue = vec![Tissue::Air; meta.len()];
    let mut regions = vec![0u32; meta.len()];
    for z in 0..nz {
        let pz = (z as f64 + 0.5) * meta.spacing[2];
        let f = pz / l;
        for y in 0..ny {
            let py = (y as f64 + 0.5) * meta.spacing[1];
            for x in 0..nx {
                let px = (x as f64 + 0.5) * meta.spacing[0];
                let i = meta.index(x, y, z);
                let (dx, dy) = (px - cx, py - cy);
                if !ell(dx, dy, 0.45 * w, 0.42 * d) {
                    continue;
                }
                let mut t = Tissue::SoftTissue;
                let mut region = None;
                if f < bands::PELVIS {
                    if ell(dx.abs() - 0.2 * w, dy, 0.07 * w, 0.07 * w) {
                        region = Some(RegionCode::Limbs);
                    }
                } else if f < bands::SPINE {
                    if ell(dx, dy, 0.34 * w, 0.30 * d) && !ell(dx, dy, 0.24 * w, 0.20 * d) {
                        region = Some(RegionCode::Pelvis);
                    }
                } else {
                    if ell(dx, py - spine_y, vert_r, vert_r) {
                        region = Some(if f < bands::THORACIC {
                            RegionCode::LumbarSpine
                        } else if f < bands::CERVICAL {
                            RegionCode::ThoracicSpine
                        } else {
                            RegionCode::CervicalSpine
                        });
                    } else if (bands::THORACIC..bands::CERVICAL).contains(&f)
                        && ell(dx, dy, 0.42 * w, 0.39 * d)
                        && !ell(dx, dy, 0.38 * w, 0.35 * d)
                    {
                        region = Some(RegionCode::Thorax);
                    }
                }
                if f >= bands::CANAL && region.is_none() && ell(dx, py - canal_y, canal_r, canal_r) {
                    t = Tissue::Canal;
                }
                let (ox, oy, oz) = ((px - organ_c[0]) / organ_r[0], (py - organ_c[1]) / organ_r[1], (pz - organ_c[2]) / organ_r[2]);
                if region.is_none() && t == Tissue::SoftTissue && ox * ox + oy * oy + oz * oz <= 1.0 {
                    t = Tissue::Organ;
                }
                if let Some(r) = region {
                    t = Tissue::Marrow;
                    regions[i] = r.code();
                }
                tissue[i] = t;
            }
        }
    }
    Anatomy { meta: *meta, tissue, regions }
}

/// Voxel centres of a given region's bone (mm), in raster order.
pub fn bone_centers(anat: &Anatomy, region: RegionCode) -> Vec<[f64; 3]> {
    let m = &anat.meta;
    (0..m.len())
        .filter(|&i| anat.regions[i] == region.code())
        .map(|i| {
            let [x, y, z] = m.coords(i);
            [(x as f64 + 0.5) * m.spacing[0], (y as f64 + 0.5) * m.spacing[1], (z as f64 + 0.5) * m.spacing[2]]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedLesion {
    #[serde(with = "numfmt::real")]
    pub s0: f64,
    #[serde(with = "numfmt::real")]
    pub adc: f64,
    pub voxels: usize,
}

/// Scalar truth that is not a volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    #[serde(with = "numfmt::vec_real")]
    pub station_gains: Vec<f64>,
    #[serde(with = "numfmt::real")]
    pub scan_gain: f64,
    pub lesions: Vec<PlantedLesion>,
    pub lesion_voxels: usize,
    #[serde(with = "numfmt::real")]
    pub lesion_volume_ml: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomTruth {
    pub lesion_mask: ScalarVolume,
    pub s0: ScalarVolume,
    pub adc: ScalarVolume,
    pub summary: TruthSummary,
}

fn tissue_draws(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let t = &spec.tissues;
    let classes = [t.air, t.soft_tissue, t.organ, t.canal, t.marrow].iter().map(|p| p.draw(rng)).collect();
    let lesions = spec
        .lesions
        .iter()
        .map(|l| {
            let (s0, adc) = t.lesion.draw(rng);
            (l.s0.unwrap_or(s0), l.adc.unwrap_or(adc))
        })
        .collect();
    (classes, lesions)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(StudyBundle, PhantomTruth), PhantomError> {
    let meta = spec.validate()?;
    let mut anat = anatomy(&meta);
    // later lesions win where spheroids overlap
    for (k, l) in spec.lesions.iter().enumerate() {
        let lo = [0, 1, 2].map(|a| (((l.center_mm[a] - l.radii_mm[a]) / meta.spacing[a]).floor().max(0.0)) as usize);
        let hi = [0, 1, 2].map(|a| ((((l.center_mm[a] + l.radii_mm[a]) / meta.spacing[a]).ceil()) as usize).min(meta.dims[a]));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    let p = [(x as f64 + 0.5) * meta.spacing[0], (y as f64 + 0.5) * meta.spacing[1], (z as f64 + 0.5) * meta.spacing[2]];
                    let r2: f64 = (0..3).map(|a| ((p[a] - l.center_mm[a]) / l.radii_mm[a]).powi(2)).sum();
                    let i = meta.index(x, y, z);
                    if r2 <= 1.0 && matches!(anat.tissue[i], Tissue::Marrow | Tissue::Lesion(_)) {
                        anat.tissue[i] = Tissue::Lesion(k);
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (classes, lesion_params) = tissue_draws(spec, &mut rng);
    let params = |t: Tissue| match t {
        Tissue::Air => classes[0],
        Tissue::SoftTissue => classes[1],
        Tissue::Organ => classes[2],
        Tissue::Canal => classes[3],
        Tissue::Marrow => classes[4],
        Tissue::Lesion(k) => lesion_params[k],
    };
    let s0: Vec<f64> = anat.tissue.iter().map(|&t| params(t).0).collect();
    let adc: Vec<f64> = anat.tissue.iter().map(|&t| params(t).1).collect();
    let slabs = spec.slabs();
    let gains = spec.gains();
    let slice = meta.slice_len();
    let voxel_gain: Vec<f64> = (0..meta.len())
        .map(|i| {
            let z = i / slice;
            let s = slabs.iter().position(|sl| sl.contains(z)).expect("slabs cover the grid");
            gains[s] * spec.scan_gain
        })
        .collect();
    let sigma = spec.noise_sigma * spec.tissues.marrow.s0[0];
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut b_volumes = Vec::with_capacity(spec.b_values.len());
    for &b in &spec.b_values {
        let mut brng = ChaCha8Rng::seed_from_u64(spec.seed);
        brng.set_stream(1 + b.to_bits());
        let data: Vec<f64> = (0..meta.len())
            .map(|i| {
                let clean = s0[i] * (-b * adc[i]).exp();
                let n = if sigma > 0.0 && anat.tissue[i] != Tissue::Air { noise.sample(&mut brng) } else { 0.0 };
                voxel_gain[i] * (clean + n)
            })
            .collect();
        b_volumes.push(ScalarVolume::new(meta, data)?);
    }
    let mask = |pred: &dyn Fn(Tissue) -> bool| -> Vec<f64> { anat.tissue.iter().map(|&t| if pred(t) { 1.0 } else { 0.0 }).collect() };
    let bone = |t: Tissue| matches!(t, Tissue::Marrow | Tissue::Lesion(_));
    let skeleton_prob: Vec<f64> = anat.tissue.iter().map(|&t| if bone(t) { 0.95 } else if t == Tissue::Air { 0.0 } else { 0.02 }).collect();
    let lesion_mask = ScalarVolume::new(meta, mask(&|t| matches!(t, Tissue::Lesion(_))))?;
    let mut lesions: Vec<PlantedLesion> = lesion_params.iter().map(|&(s0, adc)| PlantedLesion { s0, adc, voxels: 0 }).collect();
    for t in &anat.tissue {
        if let Tissue::Lesion(k) = t {
            lesions[*k].voxels += 1;
        }
    }
    let lesion_voxels = lesions.iter().map(|l| l.voxels).sum::<usize>();
    let bundle = StudyBundle {
        b_values: spec.b_values.clone(),
        b_volumes,
        station_slabs: slabs,
        skeleton_prob: ScalarVolume::new(meta, skeleton_prob)?,
        canal_mask: if spec.omit_canal { None } else { Some(ScalarVolume::new(meta, mask(&|t| t == Tissue::Canal))?) },
        organ_mask: ScalarVolume::new(meta, mask(&|t| t == Tissue::Organ))?,
        region_labels: LabelVolume::new(meta, anat.regions)?,
        timepoint: spec.timepoint,
    };
    bundle.validate()?;
    let truth = PhantomTruth {
        lesion_mask,
        s0: ScalarVolume::new(meta, s0)?,
        adc: ScalarVolume::new(meta, adc)?,
        summary: TruthSummary {
            station_gains: gains,
            scan_gain: spec.scan_gain,
            lesions,
            lesion_voxels,
            lesion_volume_ml: lesion_voxels as f64 * crate::model::voxel_volume_ml(&meta),
            seed: spec.seed,
        },
    };
    Ok((bundle, truth))
}

pub const TRUTH_DIR: &str = "truth";

/// Writes the study (consumable by `load_study`) plus a `truth/` folder with
/// the lesion mask, true S0/ADC maps, and a JSON summary.
pub fn write_phantom(bundle: &StudyBundle, truth: &PhantomTruth, dir: impl AsRef<Path>) -> Result<(), PhantomError> {
    let dir = dir.as_ref();
    write_study(bundle, dir)?;
    let t = dir.join(TRUTH_DIR);
    std::fs::create_dir_all(&t)?;
    write_nifti(&truth.lesion_mask, t.join("lesion_mask.nii"))?;
    write_nifti(&truth.s0, t.join("s0.nii"))?;
    write_nifti(&truth.adc, t.join("adc.nii"))?;
    std::fs::write(t.join("truth.json"), serde_json::to_string_pretty(&truth.summary)?)?;
    Ok(())
}
