//! JSON sidecar describing one study directory, and whole-body assembly of
//! per-station acquisitions.

use super::nifti::{read_nifti, write_nifti, write_region_labels, NiftiError};
use crate::model::{
    resample_to_grid, validate_slabs, GridMeta, LabelVolume, ModelError, ResampleMode, ScalarVolume, StationSlab,
    StudyBundle, TimepointTag,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SIDECAR_VERSION: u32 = 1;
pub const SIDECAR_FILE: &str = "sidecar.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("sidecar is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported sidecar_version {0}")]
    Version(u32),
    #[error("insufficient b-values: need at least 2, got {0}")]
    InsufficientBValues(usize),
    #[error("b-values must be strictly ascending")]
    UnsortedBValues,
    #[error("series list does not match bvalues: {0}")]
    SeriesMismatch(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(String),
    #[error("station {station} of b={b} has in-plane grid {found:?}, expected {expected:?}")]
    InPlaneMismatch { b: f64, station: usize, expected: ([usize; 2], [f64; 2]), found: ([usize; 2], [f64; 2]) },
    #[error("b={b} volume does not overlap the b={reference} grid")]
    NoOverlap { b: f64, reference: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesEntry {
    pub b: f64,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFiles {
    pub skeleton_prob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canal: Option<String>,
    pub organs: String,
    pub regions: String,
}

/// Parsed `sidecar.json`. Paths are relative to the sidecar's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarManifest {
    pub sidecar_version: u32,
    pub bvalues: Vec<f64>,
    pub series: Vec<SeriesEntry>,
    #[serde(default)]
    pub stations: Vec<StationSlab>,
    pub masks: MaskFiles,
    pub timepoint: TimepointTag,
}

impl SidecarManifest {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.sidecar_version != SIDECAR_VERSION {
            return Err(IngestError::Version(self.sidecar_version));
        }
        if self.bvalues.len() < 2 {
            return Err(IngestError::InsufficientBValues(self.bvalues.len()));
        }
        if self.bvalues.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(IngestError::UnsortedBValues);
        }
        if self.series.len() != self.bvalues.len() {
            return Err(IngestError::SeriesMismatch(format!(
                "{} series for {} b-values",
                self.series.len(),
                self.bvalues.len()
            )));
        }
        for (s, &b) in self.series.iter().zip(&self.bvalues) {
            if s.b != b {
                return Err(IngestError::SeriesMismatch(format!("series b={} listed where b={} expected", s.b, b)));
            }
            if s.files.is_empty() {
                return Err(IngestError::SeriesMismatch(format!("series b={b} has no files")));
            }
        }
        let counts: Vec<usize> = self.series.iter().map(|s| s.files.len()).collect();
        if counts.iter().any(|&c| c != counts[0]) {
            return Err(IngestError::SeriesMismatch("series have different station counts".into()));
        }
        Ok(())
    }

    fn all_files(&self) -> Vec<&str> {
        let mut files: Vec<&str> = self.series.iter().flat_map(|s| s.files.iter().map(String::as_str)).collect();
        files.push(&self.masks.skeleton_prob);
        files.push(&self.masks.organs);
        files.push(&self.masks.regions);
        if let Some(c) = &self.masks.canal {
            files.push(c);
        }
        files
    }

    /// Every file path the study references, resolved against `base`.
    pub fn referenced_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.all_files().into_iter().map(|f| base.join(f)).collect()
    }
}

/// A manifest together with the directory its paths resolve against.
#[derive(Clone, Debug)]
pub struct StudySource {
    pub manifest: SidecarManifest,
    pub base_dir: PathBuf,
}

impl StudySource {
    /// Loads `<dir>/sidecar.json` and checks that every referenced file exists.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref();
        let path = dir.join(SIDECAR_FILE);
        let text = fs::read_to_string(&path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
        let manifest: SidecarManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        for p in manifest.referenced_paths(dir) {
            if !p.is_file() {
                return Err(IngestError::MissingFile(p.display().to_string()));
            }
        }
        Ok(StudySource { manifest, base_dir: dir.to_path_buf() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }
}

fn in_plane(meta: &GridMeta) -> ([usize; 2], [f64; 2]) {
    ([meta.dims[0], meta.dims[1]], [meta.spacing[0], meta.spacing[1]])
}

/// Stacks station volumes along z. Returns the whole-body volume and the
/// slab index ranges.
pub fn concat_stations(b: f64, stations: &[ScalarVolume]) -> Result<(ScalarVolume, Vec<StationSlab>), IngestError> {
    let first = stations[0].meta();
    let mut slabs = Vec::with_capacity(stations.len());
    let mut nz = 0;
    for (i, s) in stations.iter().enumerate() {
        let m = s.meta();
        if in_plane(m) != in_plane(first) || m.spacing[2] != first.spacing[2] {
            return Err(IngestError::InPlaneMismatch { b, station: i, expected: in_plane(first), found: in_plane(m) });
        }
        slabs.push(StationSlab { z_start: nz, z_end: nz + m.dims[2] - 1 });
        nz += m.dims[2];
    }
    let meta = GridMeta::new([first.dims[0], first.dims[1], nz], first.spacing, first.origin)?;
    let mut data = Vec::with_capacity(meta.len());
    for s in stations {
        data.extend_from_slice(s.data());
    }
    Ok((ScalarVolume::new(meta, data)?, slabs))
}

fn overlaps(a: &GridMeta, b: &GridMeta) -> bool {
    (0..3).all(|k| {
        let lo = |m: &GridMeta| m.origin[k] - m.spacing[k] / 2.0;
        let hi = |m: &GridMeta| m.origin[k] + (m.dims[k] as f64 - 0.5) * m.spacing[k];
        lo(a) < hi(b) && lo(b) < hi(a)
    })
}

/// Assembles a whole-body [`StudyBundle`] from a study directory.
///
/// Lower b-value series are resampled (trilinear) onto the grid of the
/// highest b-value; masks are resampled with nearest-neighbour lookup.
pub fn assemble_stations(source: &StudySource) -> Result<StudyBundle, IngestError> {
    let m = &source.manifest;
    m.validate()?;
    let series: Vec<(ScalarVolume, Vec<StationSlab>)> = m
        .series
        .par_iter()
        .map(|s| {
            let vols = s.files.iter().map(|f| read_nifti(source.path(f))).collect::<Result<Vec<_>, _>>()?;
            concat_stations(s.b, &vols)
        })
        .collect::<Result<_, IngestError>>()?;

    let (top_vol, top_slabs) = series.last().unwrap();
    let target = *top_vol.meta();
    let slabs = if m.stations.is_empty() {
        top_slabs.clone()
    } else {
        if top_slabs.len() > 1 && m.stations != *top_slabs {
            return Err(ModelError::BadSlabs("sidecar stations disagree with station file extents".into()).into());
        }
        m.stations.clone()
    };
    validate_slabs(&slabs, target.dims[2])?;

    let top_b = *m.bvalues.last().unwrap();
    let mut b_volumes = Vec::with_capacity(series.len());
    for ((vol, _), &b) in series.into_iter().zip(&m.bvalues) {
        if vol.meta().same_grid(&target) {
            b_volumes.push(vol);
        } else {
            if !overlaps(vol.meta(), &target) {
                return Err(IngestError::NoOverlap { b, reference: top_b });
            }
            b_volumes.push(resample_to_grid(&vol, &target, ResampleMode::Trilinear)?);
        }
    }

    let load_mask = |rel: &str| -> Result<ScalarVolume, IngestError> {
        let v = read_nifti(source.path(rel))?;
        Ok(resample_to_grid(&v, &target, ResampleMode::Nearest)?)
    };
    let skeleton_prob = load_mask(&m.masks.skeleton_prob)?;
    let canal_mask = m.masks.canal.as_deref().map(load_mask).transpose()?;
    let organ_mask = load_mask(&m.masks.organs)?;
    let region_labels = LabelVolume::from_scalar(&load_mask(&m.masks.regions)?)?;

    let bundle = StudyBundle {
        b_values: m.bvalues.clone(),
        b_volumes,
        station_slabs: slabs,
        skeleton_prob,
        canal_mask,
        organ_mask,
        region_labels,
        timepoint: m.timepoint,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Opens and assembles a study directory in one step.
pub fn load_study(dir: impl AsRef<Path>) -> Result<StudyBundle, IngestError> {
    assemble_stations(&StudySource::open(dir)?)
}

/// Writes a bundle as a study directory: one NIfTI per station per b-value,
/// the four mask files, and `sidecar.json`.
pub fn write_study(bundle: &StudyBundle, dir: impl AsRef<Path>) -> Result<SidecarManifest, IngestError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.display().to_string(), source })?;
    let meta = *bundle.meta();
    let slice = meta.slice_len();
    let mut series = Vec::new();
    for (b, vol) in bundle.b_values.iter().zip(&bundle.b_volumes) {
        let mut files = Vec::new();
        for (i, slab) in bundle.station_slabs.iter().enumerate() {
            let mut smeta = meta;
            smeta.dims[2] = slab.len();
            smeta.origin[2] = meta.origin[2] + slab.z_start as f64 * meta.spacing[2];
            let data = vol.data()[slab.z_start * slice..(slab.z_end + 1) * slice].to_vec();
            let name = format!("b{}_s{}.nii", b, i + 1);
            write_nifti(&ScalarVolume::new(smeta, data)?, dir.join(&name))?;
            files.push(name);
        }
        series.push(SeriesEntry { b: *b, files });
    }
    write_nifti(&bundle.skeleton_prob, dir.join("skeleton_prob.nii"))?;
    write_nifti(&bundle.organ_mask, dir.join("organs.nii"))?;
    write_region_labels(&bundle.region_labels, dir.join("regions.nii"))?;
    let canal = match &bundle.canal_mask {
        Some(c) => {
            write_nifti(c, dir.join("canal.nii"))?;
            Some("canal.nii".to_string())
        }
        None => None,
    };
    let manifest = SidecarManifest {
        sidecar_version: SIDECAR_VERSION,
        bvalues: bundle.b_values.clone(),
        series,
        stations: bundle.station_slabs.clone(),
        masks: MaskFiles {
            skeleton_prob: "skeleton_prob.nii".into(),
            canal,
            organs: "organs.nii".into(),
            regions: "regions.nii".into(),
        },
        timepoint: bundle.timepoint,
    };
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    Ok(manifest)
}
